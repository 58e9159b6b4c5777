"""Sequential importance resampling (SIR) filters.

``run_filter`` is the bootstrap/guided particle filter whose product of
mean incremental weights estimates p_theta(y_{1:T}); it resamples at every
step. ``run_conditional_filter`` is the conditional SMC sweep used by
Particle Gibbs, with the retained trajectory pinned to the last particle
slot. Weights are handled in log space with max subtraction.
"""
from dataclasses import dataclass, field
import logging
import math
from typing import Callable, Optional

import numpy as np
import pandas as pd

from errors import FilterError, PrcError, ResamplingError
from models import StateSpaceModel
from prc import (corrected_log_weight, estimate_r, prc_propagate, redraws_ancestor,
                 threshold_for_step)
from schema import FilterConfig, PrcConfig, ResamplingScheme, ThresholdPolicy
from utils import log_mean_exp, log_normalize, sanitize_log_weights

logger = logging.getLogger(__name__)

# (n, x, rng) -> log local likelihood of y_n for each particle
LogLikelihoodFn = Callable[[int, np.ndarray, np.random.Generator], np.ndarray]


@dataclass
class ParticleSystem:
    """Particles, genealogy and weights of one filter run.

    Indices are 0-based: ``ancestors[n - 1, k]`` is the index at step n - 1 of
    the parent of particle k at step n.
    """
    particles: np.ndarray
    ancestors: np.ndarray
    norm_weights: np.ndarray
    log_weights: np.ndarray
    log_increments: np.ndarray
    log_ml: float
    collapsed_at: Optional[int] = None
    conditional: bool = False
    step_stats: list[dict] = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.particles.shape[0]

    @property
    def N(self) -> int:
        return self.particles.shape[1]

    @property
    def collapsed(self) -> bool:
        return self.collapsed_at is not None

    def ess(self) -> np.ndarray:
        return np.array([ess(row) if np.all(np.isfinite(row)) else np.nan for row in self.norm_weights])

    def trace_frame(self) -> pd.DataFrame:
        """Long-format particle dump: n, k, x, weight, log_weight, ancestor (1-based)"""
        T, N = self.particles.shape
        n = np.repeat(np.arange(1, T + 1), N)
        k = np.tile(np.arange(1, N + 1), T)
        ancestor = pd.array(np.concatenate([np.zeros(N, dtype=int), self.ancestors.ravel() + 1]), dtype="Int64")
        ancestor[:N] = pd.NA
        return pd.DataFrame({
            "n": n,
            "k": k,
            "x": self.particles.ravel(),
            "weight": self.norm_weights.ravel(),
            "log_weight": self.log_weights.ravel(),
            "ancestor": ancestor,
        })


class SmcKernel:
    """Proposal q_theta and pre-PRC incremental weight w~ of one filter run.

    w~_1 = mu g / q_1 and w~_n = f g / q; with the bootstrap proposal the
    ratio f / q is exactly one and only g is evaluated. ``log_likelihood``
    replaces ln g, e.g. by an ABC approximation.
    """

    def __init__(self, model: StateSpaceModel, theta, y: np.ndarray,
                 log_likelihood: LogLikelihoodFn | None = None):
        self.model = model
        self.theta = np.asarray(theta, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.log_likelihood = log_likelihood or self.exact_log_likelihood

    def exact_log_likelihood(self, n: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.model.logpdf_observation(self.theta, x, self.y[n])

    def propose(self, n: int, x_prev: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if n == 0:
            return self.model.sample_initial_proposal(self.theta, self.y[0], x_prev.shape[0], rng)
        return self.model.sample_proposal(self.theta, x_prev, self.y[n], rng)

    def log_weight(self, n: int, x_prev: np.ndarray, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        with np.errstate(over='ignore', invalid='ignore'):
            log_w = self.log_likelihood(n, x, rng)
            if not self.model.is_bootstrap:
                if n == 0:
                    log_w = log_w + self.model.logpdf_initial(self.theta, x) \
                        - self.model.logpdf_initial_proposal(self.theta, self.y[0], x)
                else:
                    log_w = log_w + self.model.logpdf_transition(self.theta, x_prev, x) \
                        - self.model.logpdf_proposal(self.theta, x_prev, self.y[n], x)
        return sanitize_log_weights(log_w)

    def step_fns(self, n: int):
        return (lambda xp, rng: self.propose(n, xp, rng),
                lambda xp, x, rng: self.log_weight(n, xp, x, rng))


def ess(norm_weights_row: np.ndarray) -> float:
    """Effective sample size 1 / sum W^2, in [1, N] for a normalized row"""
    w = np.asarray(norm_weights_row, dtype=float)
    return float(1.0 / np.sum(w ** 2))


def resample(norm_weights: np.ndarray, N: int, scheme: ResamplingScheme | str,
             rng: np.random.Generator) -> np.ndarray:
    """Draw N ancestor indices from normalized weights (multinomial or systematic)"""
    w = np.asarray(norm_weights, dtype=float)
    if np.any(w < 0):
        raise ResamplingError("Resampling weights must be non-negative")
    if not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ResamplingError("Resampling weights must be finite with a positive sum")
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    cdf[-1] = 1.0

    scheme = ResamplingScheme(scheme)
    if scheme == ResamplingScheme.MULTINOMIAL:
        u = rng.uniform(size=N)
    elif scheme == ResamplingScheme.SYSTEMATIC:
        u = (rng.uniform() + np.arange(N)) / N
    else:
        raise ResamplingError(f"Unsupported resampling scheme: {scheme}")
    return np.minimum(np.searchsorted(cdf, u, side='right'), w.size - 1)


def _empty_system(T: int, N: int, conditional: bool = False) -> ParticleSystem:
    return ParticleSystem(
        particles=np.zeros((T, N)),
        ancestors=np.zeros((max(T - 1, 0), N), dtype=int),
        norm_weights=np.full((T, N), np.nan),
        log_weights=np.full((T, N), -np.inf),
        log_increments=np.full(T, -np.inf),
        log_ml=-np.inf,
        conditional=conditional,
    )


def r_regime(prc: PrcConfig) -> str:
    if prc.threshold_policy == ThresholdPolicy.DISABLED:
        return "disabled"
    if prc.r_estimation_draws > 0:
        return f"monte_carlo(M={prc.r_estimation_draws})"
    return "pure_filter" if prc.pure_filter else "first_step_only"


def _prc_step(n: int, kernel: SmcKernel, x_prev: np.ndarray, ancestors: np.ndarray | None,
              prev_particles: np.ndarray | None, prev_weights: np.ndarray | None,
              prc: PrcConfig, scheme: ResamplingScheme, rng: np.random.Generator):
    """One PRC mutation of the whole population.

    Two passes: weigh every first-attempt proposal, set c_n, then run the
    rejection loop seeded with those first attempts.
    """
    propose, weigh = kernel.step_fns(n)
    x0 = propose(x_prev, rng)
    lw0 = weigh(x_prev, x0, rng)
    log_c = threshold_for_step(prc, lw0)

    redraw = None
    if n > 0 and redraws_ancestor(prc):
        def redraw(count, rng):
            idx = resample(prev_weights, count, scheme, rng)
            return idx, prev_particles[idx]

    result = prc_propagate(x_prev, log_c, propose, weigh, prc, rng,
                           first_attempt=(x0, lw0), ancestors=ancestors, redraw_ancestors=redraw)

    if log_c == -np.inf:
        log_r = np.zeros(result.x.shape[0])
    elif prc.r_estimation_draws > 0:
        M = prc.r_estimation_draws
        if redraw is not None:
            # r averages over ancestors drawn afresh from W_{n-1}, not over the loop survivors
            _, fresh_prev = redraw(result.x.shape[0] * M, rng)
            r_mean = estimate_r(log_c, fresh_prev, propose, weigh, 1, rng).mean()
            r_hat = np.full(result.x.shape[0], r_mean)
        else:
            r_hat = estimate_r(log_c, result.x_prev, propose, weigh, M, rng)
            # particle independent at n = 1
            if n == 0:
                r_hat = np.full_like(r_hat, r_hat.mean())
        with np.errstate(divide='ignore'):
            log_r = np.log(r_hat)
    elif n == 0 or prc.pure_filter:
        log_r = np.zeros(result.x.shape[0])
    else:
        raise PrcError("r_estimation_draws = 0 with a positive threshold after the first step "
                       "is only valid for pure filtering (set prc.pure_filter)")

    log_w = corrected_log_weight(result.log_w_tilde, log_c, log_r)
    stats = {
        "log_c_n": float(log_c),
        "mean_attempts": float(result.attempts.mean()),
        "cap_exhausted": int(result.capped.sum()),
        "r_hat_mean": float(np.exp(log_r).mean()),
        "r_hat_min": float(np.exp(log_r).min()),
        "first_attempt_below": float(np.mean(lw0 < log_c)),
    }
    return result, log_w, stats


def run_smc(model: StateSpaceModel, theta, y: np.ndarray, config: FilterConfig,
            rng: np.random.Generator, log_likelihood: LogLikelihoodFn | None = None,
            step_hook: Callable[[int, dict], None] | None = None) -> ParticleSystem:
    """SIR recursion shared by the exact and ABC filters"""
    y = np.asarray(y, dtype=float)
    T, N = y.shape[0], config.n_particles
    if T < 1:
        raise FilterError("Need at least one observation")
    kernel = SmcKernel(model, theta, y, log_likelihood)
    system = _empty_system(T, N)
    prc = config.prc if config.prc is not None and config.prc.threshold_policy != ThresholdPolicy.DISABLED else None
    debug = logger.isEnabledFor(logging.DEBUG)
    log_n = math.log(N)

    x_prev = np.zeros(N)
    for n in range(T):
        ancestors = None
        if n > 0:
            ancestors = resample(system.norm_weights[n - 1], N, config.resampling_scheme, rng)
            x_prev = system.particles[n - 1, ancestors]

        stats = {}
        if prc is None:
            propose, weigh = kernel.step_fns(n)
            x = propose(x_prev, rng)
            log_w = weigh(x_prev, x, rng)
        else:
            result, log_w, stats = _prc_step(
                n, kernel, x_prev, ancestors,
                system.particles[n - 1] if n > 0 else None,
                system.norm_weights[n - 1] if n > 0 else None,
                prc, config.resampling_scheme, rng)
            x = result.x
            ancestors = result.ancestors

        system.particles[n] = x
        if n > 0:
            system.ancestors[n - 1] = ancestors
        system.log_weights[n] = log_w
        norm_w, log_sum = log_normalize(log_w)
        if log_sum == -np.inf:
            system.collapsed_at = n
            logger.debug(f"Filter collapsed at step {n + 1}: all incremental weights are zero")
            break
        system.norm_weights[n] = norm_w
        system.log_increments[n] = log_sum - log_n

        if step_hook is not None:
            step_hook(n, stats)
        stats["step"] = n + 1
        stats["ess"] = ess(norm_w)
        system.step_stats.append(stats)
        if debug:
            logger.debug(f"Filter step {n + 1}/{T}", extra={"filter_step": stats})

    system.log_ml = -np.inf if system.collapsed else float(np.sum(system.log_increments))
    if prc is not None:
        caps = sum(s.get("cap_exhausted", 0) for s in system.step_stats)
        if caps:
            logger.debug(f"PRC attempt cap exhausted {caps} times in one filter run")
    return system


def run_filter(model: StateSpaceModel, theta, y: np.ndarray, config: FilterConfig,
               rng: np.random.Generator) -> ParticleSystem:
    """Run the particle filter configured by ``config``.

    Returns a collapsed system with log_ml = -inf, rather than raising, when
    every incremental weight of some step is zero.
    """
    if config.abc is not None:
        from abc_filter import run_abc_prc_filter
        return run_abc_prc_filter(model, theta, y, config, config.abc, config.prc, rng)
    if not model.in_support(theta):
        raise FilterError(f"Filter called at theta {list(np.asarray(theta))} outside the prior support")
    return run_smc(model, theta, y, config, rng)


def run_conditional_filter(model: StateSpaceModel, theta, y: np.ndarray, config: FilterConfig,
                           retained_path: np.ndarray, rng: np.random.Generator) -> ParticleSystem:
    """Conditional SMC: the last particle slot holds ``retained_path`` at every step.

    Resampling is always multinomial here. PRC and ABC settings do not apply
    to the conditional sweep, which uses the exact densities.
    """
    y = np.asarray(y, dtype=float)
    retained_path = np.asarray(retained_path, dtype=float)
    T, N = y.shape[0], config.n_particles
    if retained_path.shape != (T,):
        raise FilterError(f"Retained path has shape {retained_path.shape}, expected ({T},)")
    if config.prc is not None or config.abc is not None:
        logger.debug("Conditional SMC ignores PRC/ABC settings and uses exact weights")

    kernel = SmcKernel(model, theta, y)
    system = _empty_system(T, N, conditional=True)
    free = N - 1
    log_n = math.log(N)

    x_prev = np.zeros(N)
    for n in range(T):
        if n > 0:
            ancestors = np.empty(N, dtype=int)
            ancestors[:free] = resample(system.norm_weights[n - 1], free, ResamplingScheme.MULTINOMIAL, rng)
            ancestors[free] = free
            system.ancestors[n - 1] = ancestors
            x_prev = system.particles[n - 1, ancestors]

        x = np.empty(N)
        x[:free] = kernel.propose(n, x_prev[:free], rng)
        x[free] = retained_path[n]
        log_w = kernel.log_weight(n, x_prev, x, rng)

        system.particles[n] = x
        system.log_weights[n] = log_w
        norm_w, log_sum = log_normalize(log_w)
        if log_sum == -np.inf:
            system.collapsed_at = n
            logger.warning(f"Conditional SMC collapsed at step {n + 1}")
            break
        system.norm_weights[n] = norm_w
        system.log_increments[n] = log_sum - log_n

    system.log_ml = -np.inf if system.collapsed else float(np.sum(system.log_increments))
    return system


def sample_trajectory(system: ParticleSystem, rng: np.random.Generator) -> np.ndarray:
    """Draw k from the final weights and trace its genealogy back to n = 1"""
    if system.collapsed:
        raise FilterError("Cannot sample a trajectory from a collapsed particle system")
    T = system.T
    k = int(resample(system.norm_weights[T - 1], 1, ResamplingScheme.MULTINOMIAL, rng)[0])
    path = np.empty(T)
    path[T - 1] = system.particles[T - 1, k]
    for n in range(T - 2, -1, -1):
        k = system.ancestors[n, k]
        path[n] = system.particles[n, k]
    return path


def log_ml_from_trace(trace: pd.DataFrame) -> float:
    """Re-evaluate sum_n ln( (1/N) sum_k w_n^k ) from a particle trace dump"""
    per_step = trace.groupby("n", sort=True)["log_weight"].apply(lambda lw: log_mean_exp(lw.to_numpy()))
    return float(np.sum(per_step.to_numpy()))
