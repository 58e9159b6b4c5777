"""Exact reference computations for the linear-Gaussian model.

Scalar Kalman filter likelihood, the brute-force joint Gaussian density of
y_{1:T}, an "ideal" marginal Metropolis-Hastings chain that uses the exact
likelihood, and the two acceptance suites built on them.
"""
from dataclasses import dataclass
import logging
import math

import numpy as np
from scipy.stats import ks_2samp, multivariate_normal, norm

from filter import run_filter
from models import LinearGaussianModel, simulate
from schema import (Algorithm, ChainConfig, FilterConfig, LinearGaussianParams, OracleCheckConfig,
                    ProposalConfig, ProposalKind)
from utils import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KalmanState:
    mean: float
    variance: float
    loglik: float = 0.0


def kalman_update(state: KalmanState, params: LinearGaussianParams, y_n: float) -> KalmanState:
    """Condition the predicted state on y_n and add ln p(y_n | y_{1:n-1})"""
    innovation_var = state.variance + params.obs_var
    loglik = state.loglik + float(norm.logpdf(y_n, loc=state.mean, scale=math.sqrt(innovation_var)))
    gain = state.variance / innovation_var
    return KalmanState(state.mean + gain * (y_n - state.mean), (1.0 - gain) * state.variance, loglik)


def kalman_predict(state: KalmanState, params: LinearGaussianParams) -> KalmanState:
    return KalmanState(params.ar_coeff * state.mean,
                       params.ar_coeff ** 2 * state.variance + params.state_var,
                       state.loglik)


def kalman_loglik(params: LinearGaussianParams, y: np.ndarray) -> float:
    """Exact ln p_theta(y_{1:T}) by the predict/update recursion"""
    state = KalmanState(params.init_mean, params.init_var)
    for n, y_n in enumerate(np.asarray(y, dtype=float)):
        if n > 0:
            state = kalman_predict(state, params)
        state = kalman_update(state, params, float(y_n))
    return state.loglik


def joint_gaussian_loglik(params: LinearGaussianParams, y: np.ndarray) -> float:
    """ln p(y_{1:T}) from the explicitly assembled joint covariance (small T only)"""
    y = np.asarray(y, dtype=float)
    T = y.size
    phi = params.ar_coeff
    var = np.empty(T)
    var[0] = params.init_var
    for n in range(1, T):
        var[n] = phi ** 2 * var[n - 1] + params.state_var
    idx = np.arange(T)
    lag = np.abs(idx[:, None] - idx[None, :])
    cov_x = phi ** lag * var[np.minimum(idx[:, None], idx[None, :])]
    mean = params.init_mean * phi ** idx
    cov_y = cov_x + params.obs_var * np.eye(T)
    return float(multivariate_normal(mean=mean, cov=cov_y).logpdf(y))


@dataclass(frozen=True)
class IdealState:
    theta: np.ndarray
    loglik: float
    log_prior: float


def ideal_marginal_mh_step(state: IdealState, model: LinearGaussianModel, y: np.ndarray,
                           proposal_cov: np.ndarray, rng: np.random.Generator) -> tuple[IdealState, bool, float]:
    """One random-walk MH step on theta with the Kalman likelihood in place of p-hat.

    Returns the new state, the accept flag and ln of the acceptance ratio.
    """
    theta_star = rng.multivariate_normal(state.theta, proposal_cov)
    log_prior_star = model.prior_logpdf(theta_star)
    if not np.isfinite(log_prior_star):
        return state, False, -np.inf
    loglik_star = kalman_loglik(model.lg_params(theta_star), y)
    log_ratio = (loglik_star + log_prior_star) - (state.loglik + state.log_prior)
    if math.log(rng.uniform()) < log_ratio:
        return IdealState(theta_star, loglik_star, log_prior_star), True, log_ratio
    return state, False, log_ratio


def run_ideal_chain(model: LinearGaussianModel, y: np.ndarray, theta0: np.ndarray, n_iters: int,
                    proposal_cov: np.ndarray, seed) -> np.ndarray:
    rng = make_rng(seed)
    theta0 = np.asarray(theta0, dtype=float)
    state = IdealState(theta0, kalman_loglik(model.lg_params(theta0), y), model.prior_logpdf(theta0))
    thetas = np.empty((n_iters, theta0.size))
    for i in range(n_iters):
        state, _, _ = ideal_marginal_mh_step(state, model, y, proposal_cov, rng)
        thetas[i] = state.theta
    return thetas


@dataclass
class CheckResult:
    name: str
    passed: bool
    statistic: float
    threshold: float
    details: dict

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] {self.name}: statistic={self.statistic:.5g} threshold={self.threshold:.5g} {self.details}"


def check_unbiasedness(config: OracleCheckConfig, params: LinearGaussianParams | None = None,
                       seed: int = 0) -> CheckResult:
    """Mean of p-hat / p_exact over independent filter runs lies within 3 SE of 1"""
    params = params or LinearGaussianParams(ar_coeff=0.9, state_var=1.0, obs_var=1.0)
    model = LinearGaussianModel(params)
    theta = model.default_theta()
    _, y = simulate(model, theta, config.unbiased_T, seed)
    exact = kalman_loglik(params, y)
    filter_config = FilterConfig(n_particles=config.unbiased_particles)
    rng = make_rng(seed + 1)
    ratios = np.array([math.exp(run_filter(model, theta, y, filter_config, rng).log_ml - exact)
                       for _ in range(config.unbiased_runs)])
    mean = float(ratios.mean())
    se = float(ratios.std(ddof=1) / math.sqrt(ratios.size))
    deviation = abs(mean - 1.0)
    logger.info(f"Unbiasedness check: mean ratio {mean:.4f}, SE {se:.4f}")
    return CheckResult("estimator_unbiasedness", deviation <= 3 * se, deviation, 3 * se,
                       {"mean_ratio": mean, "se": se, "runs": ratios.size, "exact_loglik": exact})


def check_kalman_consistency(n_params: int = 100, max_T: int = 5, seed: int = 0,
                             tolerance: float = 1e-8) -> CheckResult:
    """Kalman recursion vs the brute-force joint density over random parameterizations"""
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(n_params):
        params = LinearGaussianParams(
            ar_coeff=float(rng.uniform(-0.99, 0.99)),
            state_var=float(rng.uniform(0.1, 2.0)),
            obs_var=float(rng.uniform(0.1, 2.0)),
            init_mean=float(rng.normal()),
            init_var=float(rng.uniform(0.1, 2.0)),
        )
        y = rng.normal(size=int(rng.integers(1, max_T + 1)))
        worst = max(worst, abs(kalman_loglik(params, y) - joint_gaussian_loglik(params, y)))
    logger.info(f"Kalman consistency check: max abs difference {worst:.3e}")
    return CheckResult("kalman_consistency", worst <= tolerance, worst, tolerance, {"parameterizations": n_params})


def check_pmmh_exactness(config: OracleCheckConfig, params: LinearGaussianParams | None = None,
                         seed: int = 0) -> CheckResult:
    """KS distance between PMMH and ideal-MH posterior samples of the AR coefficient"""
    from samplers import run_chain

    params = params or LinearGaussianParams(ar_coeff=0.9, state_var=1.0, obs_var=1.0)
    model = LinearGaussianModel(params, free_params=("ar_coeff",))
    theta_true = model.default_theta()
    _, y = simulate(model, theta_true, config.ks_T, seed)

    chain_config = ChainConfig(
        algorithm=Algorithm.PMMH,
        n_iters=config.ks_iters,
        filter=FilterConfig(n_particles=config.ks_particles),
        proposal=ProposalConfig(kind=ProposalKind.RANDOM_WALK, rw_variances=(config.ks_proposal_variance,)),
        init_theta=tuple(theta_true),
        path_thin=max(config.ks_iters, 1),
    )
    pmmh = run_chain(Algorithm.PMMH, model, y, chain_config, config.ks_iters, seed + 1).thetas[:, 0]
    ideal = run_ideal_chain(model, y, theta_true, config.ks_iters,
                            np.array([[config.ks_proposal_variance]]), seed + 2)[:, 0]

    burn = int(config.ks_burn_in * config.ks_iters)
    a = pmmh[burn::config.ks_thin]
    b = ideal[burn::config.ks_thin]
    statistic = float(ks_2samp(a, b).statistic)
    logger.info(f"PMMH exactness check: KS distance {statistic:.4f}")
    return CheckResult("pmmh_exactness", statistic < config.ks_threshold, statistic, config.ks_threshold,
                       {"pmmh_mean": float(a.mean()), "ideal_mean": float(b.mean()), "samples": int(a.size)})
