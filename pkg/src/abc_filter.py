"""Likelihood-free (ABC) filtering.

The local likelihood g_theta(y_n | x_n) is replaced by
(1/S) sum_s pi(y_n(s)) over S pseudo-observations y_n(s) ~ g_theta(. | x_n),
with pi the indicator 1{rho(y_n(s), y_n) < eps} or the Gaussian density
N(y_n(s); y_n, eps^2). Plugged into the SIR recursion, optionally under
partial rejection control, the product of mean weights is the ABC
estimate of p_theta(y_{1:T}).
"""
import logging
from typing import Optional

import numpy as np
from scipy.stats import norm

from errors import FilterError
from filter import ParticleSystem, run_smc
from models import StateSpaceModel
from schema import AbcConfig, AbcKernel, Distance, FilterConfig, PrcConfig
from utils import log_mean_exp

logger = logging.getLogger(__name__)


def distance(pseudo: np.ndarray, y_n: float, metric: Distance) -> np.ndarray:
    diff = np.asarray(pseudo, dtype=float) - y_n
    if metric == Distance.ABSOLUTE:
        return np.abs(diff)
    if metric == Distance.EUCLIDEAN:
        return np.sqrt(diff ** 2)
    raise ValueError(f"Unsupported distance: {metric}")


def pseudo_observations(model: StateSpaceModel, theta, x_n: np.ndarray, S: int,
                        rng: np.random.Generator) -> np.ndarray:
    """S draws y_n(s) ~ g_theta(. | x_n) per particle, shape (N, S)"""
    x_n = np.atleast_1d(np.asarray(x_n, dtype=float))
    return model.sample_observation(theta, np.repeat(x_n, S), rng).reshape(x_n.size, S)


def kernel_log_local_likelihood(pseudo: np.ndarray, y_n: float, config: AbcConfig) -> np.ndarray:
    """ln g^ABC for pseudo-observations already drawn, one value per row"""
    if config.kernel == AbcKernel.INDICATOR:
        hits = distance(pseudo, y_n, config.distance) < config.epsilon
        with np.errstate(divide='ignore'):
            return np.log(hits.mean(axis=1))
    if config.kernel == AbcKernel.GAUSSIAN:
        return log_mean_exp(norm.logpdf(pseudo, loc=y_n, scale=config.epsilon), axis=1)
    raise ValueError(f"Unsupported ABC kernel: {config.kernel}")


def abc_log_local_likelihood(y_n: float, x_n: np.ndarray, theta, model: StateSpaceModel,
                             config: AbcConfig, rng: np.random.Generator) -> np.ndarray:
    pseudo = pseudo_observations(model, theta, x_n, config.n_pseudo, rng)
    return kernel_log_local_likelihood(pseudo, y_n, config)


def abc_local_likelihood(y_n: float, x_n: np.ndarray, theta, model: StateSpaceModel,
                         config: AbcConfig, rng: np.random.Generator) -> np.ndarray:
    """g^ABC(y_n | x_n) >= 0 per particle; zero is a legitimate indicator value"""
    return np.exp(abc_log_local_likelihood(y_n, x_n, theta, model, config, rng))


class _StepRecorder:
    """Keeps the first-pass local likelihoods of each step for the run log"""

    def __init__(self):
        self.first = {}

    def record(self, n: int, log_g: np.ndarray):
        self.first.setdefault(n, log_g)

    def merge(self, n: int, stats: dict):
        log_g = self.first.get(n)
        if log_g is None:
            return
        stats["zero_g_fraction"] = float(np.mean(log_g == -np.inf))
        stats["mean_g"] = float(np.mean(np.exp(log_g)))


def run_abc_prc_filter(model: StateSpaceModel, theta, y: np.ndarray, filter_config: FilterConfig,
                       abc_config: AbcConfig, prc_config: Optional[PrcConfig],
                       rng: np.random.Generator) -> ParticleSystem:
    """SMC-ABC filter with optional PRC mutation.

    Pseudo-observations are simulated afresh for every proposal, including
    the redraws inside the PRC loop and the draws used to estimate r.
    """
    if not model.in_support(theta):
        raise FilterError(f"ABC filter called at theta {list(np.asarray(theta))} outside the prior support")
    y = np.asarray(y, dtype=float)
    recorder = _StepRecorder()

    def log_likelihood(n, x, rng):
        log_g = abc_log_local_likelihood(y[n], x, theta, model, abc_config, rng)
        recorder.record(n, log_g)
        return log_g

    config = filter_config.model_copy(update={"prc": prc_config, "abc": abc_config})
    system = run_smc(model, theta, y, config, rng, log_likelihood=log_likelihood,
                     step_hook=recorder.merge)
    if system.collapsed:
        logger.debug(f"ABC filter collapsed at step {system.collapsed_at + 1} "
                     f"(kernel={abc_config.kernel.value}, epsilon={abc_config.epsilon})",
                     extra={"abc_collapse": True})
    return system


def abc_marginal_likelihood(system: ParticleSystem) -> float:
    """ln p^ABC_theta(y_{1:T}): the product of mean corrected weights, -inf on collapse"""
    return system.log_ml
