"""Particle MCMC: PMMH, Particle Gibbs and the PMH-within-PG hybrid.

The chain state carries the estimate ln p-hat_theta(y_{1:T}) it was accepted
with; it is never recomputed for the current state. Parameter moves use a
random-walk proposal that switches to Adaptive Metropolis after
``am_start`` iterations.
"""
from dataclasses import dataclass, field
import logging
import math
from typing import Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import Config
from errors import SamplerError
from filter import ParticleSystem, r_regime, run_conditional_filter, run_filter, sample_trajectory
from models import StateSpaceModel
from schema import (Algorithm, ChainConfig, FilterConfig, InitPathKind, ProposalConfig, ProposalKind,
                    ResamplingScheme)
from utils import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChainState:
    theta: np.ndarray
    path: np.ndarray
    log_ml: float
    log_prior: float


@dataclass
class StepOutcome:
    state: ChainState
    accepted: bool
    log_accept_ratio: float
    proposal_dim: int
    move: str
    system: Optional[ParticleSystem] = None


# ---------------------------------------------------------------------------
# Parameter proposals
# ---------------------------------------------------------------------------

def _draw_gaussian(theta: np.ndarray, cov: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if not np.any(cov):
        return theta.copy()
    return rng.multivariate_normal(theta, cov)


def _is_singular(cov: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return True
    return False


def _am_draw(theta: np.ndarray, n_history: int, cov_hat: np.ndarray, rw_cov: np.ndarray,
             config: ProposalConfig, rng: np.random.Generator) -> np.ndarray:
    d = theta.size
    if config.kind == ProposalKind.RANDOM_WALK or n_history < config.am_start:
        return _draw_gaussian(theta, rw_cov, rng)
    scale = config.am_scale if config.am_scale is not None else 2.38 ** 2 / d
    safety = config.am_safety_scale if config.am_safety_scale is not None else 0.1 ** 2 / d
    safety_cov = safety * np.eye(d)
    adapted = scale * cov_hat
    if _is_singular(adapted):
        return rng.multivariate_normal(theta, safety_cov)
    if rng.uniform() < config.am_beta:
        return rng.multivariate_normal(theta, safety_cov)
    return rng.multivariate_normal(theta, adapted)


def am_propose(theta, history: np.ndarray, config: ProposalConfig, rng: np.random.Generator,
               rw_cov: np.ndarray | None = None) -> np.ndarray:
    """Adaptive Metropolis proposal from the full theta history (batch covariance)"""
    theta = np.asarray(theta, dtype=float)
    history = np.asarray(history, dtype=float).reshape(-1, theta.size)
    d = theta.size
    rw_cov = np.eye(d) * 0.01 if rw_cov is None else np.asarray(rw_cov, dtype=float)
    if history.shape[0] > 1:
        cov_hat = np.atleast_2d(np.cov(history, rowvar=False, ddof=1))
    else:
        cov_hat = np.zeros((d, d))
    return _am_draw(theta, history.shape[0], cov_hat, rw_cov, config, rng)


class RunningMoments:
    """Welford running mean and covariance of the theta history"""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros((dim, dim))

    def update(self, theta: np.ndarray):
        self.count += 1
        delta = theta - self.mean
        self.mean = self.mean + delta / self.count
        self._m2 = self._m2 + np.outer(delta, theta - self.mean)

    @property
    def covariance(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self._m2)
        return self._m2 / (self.count - 1)


class ThetaProposal:
    """Random-walk / Adaptive Metropolis proposal fed by the chain's theta history"""

    def __init__(self, config: ProposalConfig, model: StateSpaceModel):
        self.config = config
        d = model.theta_dim
        if config.rw_variances is not None:
            if len(config.rw_variances) != d:
                raise SamplerError(f"rw_variances has {len(config.rw_variances)} entries, model has {d} free parameters")
            self.rw_cov = np.diag(np.asarray(config.rw_variances, dtype=float))
        else:
            width = np.array([high - low for low, high in model.prior_bounds.values()], dtype=float)
            self.rw_cov = np.diag((width / 100.0) ** 2)
        self.moments = RunningMoments(d)

    def observe(self, theta: np.ndarray):
        self.moments.update(np.asarray(theta, dtype=float))

    def propose(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return _am_draw(np.asarray(theta, dtype=float), self.moments.count, self.moments.covariance,
                        self.rw_cov, self.config, rng)


# ---------------------------------------------------------------------------
# Chain steps
# ---------------------------------------------------------------------------

def proposal_dimension(model: StateSpaceModel, y: np.ndarray) -> int:
    """Dimension of the joint (X_{1:T}, theta) proposal"""
    return model.theta_dim + len(y) * model.state_dim


def pmmh_step(state: ChainState, model: StateSpaceModel, y: np.ndarray, filter_config: FilterConfig,
              proposal: ThetaProposal, rng: np.random.Generator) -> StepOutcome:
    """Particle marginal Metropolis-Hastings update of (theta, x_{1:T}).

    The proposal is symmetric, so the acceptance ratio is
    p-hat* p(theta*) / (p-hat p(theta)). Proposals outside the prior support
    are rejected without running the filter; collapsed filters never accept.
    """
    dim = proposal_dimension(model, y)
    theta_star = proposal.propose(state.theta, rng)
    log_prior_star = model.prior_logpdf(theta_star)
    if not np.isfinite(log_prior_star):
        return StepOutcome(state, False, -np.inf, dim, "pmmh")

    system = run_filter(model, theta_star, y, filter_config, rng)
    if system.collapsed:
        return StepOutcome(state, False, -np.inf, dim, "pmmh", system)
    path_star = sample_trajectory(system, rng)

    log_ratio = (system.log_ml + log_prior_star) - (state.log_ml + state.log_prior)
    if math.log(rng.uniform()) < log_ratio:
        return StepOutcome(ChainState(theta_star, path_star, system.log_ml, log_prior_star),
                           True, log_ratio, dim, "pmmh", system)
    return StepOutcome(state, False, log_ratio, dim, "pmmh", system)


def pg_step(state: ChainState, model: StateSpaceModel, y: np.ndarray, filter_config: FilterConfig,
            theta_kernel: ThetaProposal, rng: np.random.Generator) -> StepOutcome:
    """Particle Gibbs: Metropolis-within-Gibbs on theta | x_{1:T}, then conditional SMC.

    The theta move targets p(theta) mu(x_1) prod f prod g with the exact
    densities along the current path.
    """
    dim = proposal_dimension(model, y)
    theta_star = theta_kernel.propose(state.theta, rng)
    log_joint_star = model.log_joint(theta_star, state.path, y)
    log_ratio = -np.inf
    theta_accepted = False
    if np.isfinite(log_joint_star):
        log_ratio = log_joint_star - model.log_joint(state.theta, state.path, y)
        theta_accepted = math.log(rng.uniform()) < log_ratio
    theta = theta_star if theta_accepted else state.theta

    system = run_conditional_filter(model, theta, y, filter_config, state.path, rng)
    if system.collapsed:
        logger.warning("Conditional SMC collapsed; keeping the current path")
        path, log_ml = state.path, state.log_ml
    else:
        path, log_ml = sample_trajectory(system, rng), system.log_ml
    new_state = ChainState(theta, path, log_ml, model.prior_logpdf(theta))
    return StepOutcome(new_state, theta_accepted, log_ratio, dim, "pg", system)


def pmh_within_pg_step(state: ChainState, model: StateSpaceModel, y: np.ndarray, filter_config: FilterConfig,
                       proposal: ThetaProposal, rng: np.random.Generator, mix_prob: float) -> StepOutcome:
    """With probability mix_prob a PMMH move, otherwise a Particle Gibbs move.

    No uniform is drawn when mix_prob is 0 or 1, so those cases reproduce
    the pure steps on the same stream.
    """
    if not 0 <= mix_prob <= 1:
        raise SamplerError(f"mix_prob must lie in [0, 1], got {mix_prob}")
    if mix_prob >= 1 or (mix_prob > 0 and rng.uniform() < mix_prob):
        return pmmh_step(state, model, y, filter_config, proposal, rng)
    return pg_step(state, model, y, filter_config, proposal, rng)


# ---------------------------------------------------------------------------
# Chain driver
# ---------------------------------------------------------------------------

@dataclass
class ChainOutput:
    theta_names: tuple[str, ...]
    thetas: np.ndarray
    log_mls: np.ndarray
    log_priors: np.ndarray
    accept_flags: np.ndarray
    log_accept_ratios: np.ndarray
    proposal_dims: np.ndarray
    moves: np.ndarray
    repeats: np.ndarray
    path_iters: np.ndarray
    paths: np.ndarray
    initial_state: ChainState
    rmse_checkpoints: dict[int, float] = field(default_factory=dict)
    initial_rmse: Optional[float] = None
    initial_system: Optional[ParticleSystem] = None

    @property
    def n_iters(self) -> int:
        return self.thetas.shape[0]

    def to_frame(self) -> pd.DataFrame:
        """One row per iteration; path_n columns filled on thinned rows only"""
        frame = pd.DataFrame({
            "iter": np.arange(1, self.n_iters + 1),
            "accepted": self.accept_flags,
            "log_ml": self.log_mls,
            "log_prior": self.log_priors,
            "log_accept_ratio": self.log_accept_ratios,
            "move": self.moves,
            "repeat": self.repeats,
            "proposal_dim": self.proposal_dims,
        })
        for j in range(self.thetas.shape[1]):
            frame[f"theta_{j + 1}"] = self.thetas[:, j]
        paths = np.full((self.n_iters, self.paths.shape[1]), np.nan)
        paths[self.path_iters] = self.paths
        path_frame = pd.DataFrame(paths, columns=[f"path_{n + 1}" for n in range(paths.shape[1])])
        return pd.concat([frame, path_frame], axis=1)


def _initial_state(model: StateSpaceModel, y: np.ndarray, config: ChainConfig,
                   rng: np.random.Generator) -> tuple[ChainState, ParticleSystem]:
    for attempt in range(1, config.init_retries + 1):
        if config.init_theta is not None:
            theta = np.asarray(config.init_theta, dtype=float)
            if not model.in_support(theta):
                raise SamplerError(f"init_theta {list(theta)} lies outside the prior support")
        else:
            theta = model.sample_prior(rng)
        system = run_filter(model, theta, y, config.filter, rng)
        if not system.collapsed:
            break
        logger.warning(f"Initial filter collapsed (attempt {attempt}/{config.init_retries})")
    else:
        raise SamplerError(f"Initial filter collapsed {config.init_retries} times; cannot start the chain")

    if config.init_path == InitPathKind.CONSTANT:
        path = np.full(len(y), config.init_path_value)
    else:
        path = sample_trajectory(system, rng)
    return ChainState(theta, path, system.log_ml, model.prior_logpdf(theta)), system


def _rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def run_chain(algorithm: Algorithm | str, model: StateSpaceModel, y: np.ndarray, config: ChainConfig,
              n_iters: int | None = None, seed=None, true_path: np.ndarray | None = None,
              progress: bool | None = None) -> ChainOutput:
    """Run one PMCMC chain; deterministic given ``seed``"""
    algorithm = Algorithm(algorithm)
    n_iters = config.n_iters if n_iters is None else n_iters
    if n_iters < 1:
        raise SamplerError(f"n_iters must be >= 1, got {n_iters}")
    progress = Config.PROGRESS if progress is None else progress
    y = np.asarray(y, dtype=float)
    rng = make_rng(seed)
    filter_config = config.filter

    scheme = filter_config.resampling_scheme
    if algorithm != Algorithm.PMMH and scheme != ResamplingScheme.MULTINOMIAL:
        logger.info("Conditional SMC sweeps use multinomial resampling regardless of the configured scheme")
    regime = r_regime(filter_config.prc) if filter_config.prc is not None else "disabled"
    logger.info(f"Starting {algorithm.value} chain: {n_iters} iterations, N={filter_config.n_particles}, "
                f"resampling={scheme.value}, prc_r_regime={regime}, abc={filter_config.abc is not None}, "
                f"proposal dimension={proposal_dimension(model, y)}",
                extra={"algorithm": algorithm.value, "resampling_scheme": scheme.value, "r_regime": regime})

    state, initial_system = _initial_state(model, y, config, rng)
    initial_state = state
    proposal = ThetaProposal(config.proposal, model)
    proposal.observe(state.theta)

    d, T = model.theta_dim, len(y)
    thetas = np.empty((n_iters, d))
    log_mls = np.empty(n_iters)
    log_priors = np.empty(n_iters)
    accepted = np.zeros(n_iters, dtype=bool)
    log_ratios = np.empty(n_iters)
    dims = np.empty(n_iters, dtype=int)
    moves = np.empty(n_iters, dtype=object)
    repeats = np.zeros(n_iters, dtype=bool)
    path_iters = np.arange(0, n_iters, config.path_thin)
    paths = np.empty((path_iters.size, T))

    checkpoints = set(config.rmse_checkpoints)
    rmse_at: dict[int, float] = {}
    path_sum = np.zeros(T)
    initial_rmse = _rmse(state.path, true_path) if true_path is not None else None
    debug = logger.isEnabledFor(logging.DEBUG)

    for i in tqdm(range(n_iters), disable=not progress, desc=algorithm.value):
        if algorithm == Algorithm.PMMH:
            outcome = pmmh_step(state, model, y, filter_config, proposal, rng)
        elif algorithm == Algorithm.PG:
            outcome = pg_step(state, model, y, filter_config, proposal, rng)
        else:
            outcome = pmh_within_pg_step(state, model, y, filter_config, proposal, rng, config.mix_prob)

        new = outcome.state
        repeats[i] = np.array_equal(new.theta, state.theta) and np.array_equal(new.path, state.path)
        state = new
        proposal.observe(state.theta)

        thetas[i] = state.theta
        log_mls[i] = state.log_ml
        log_priors[i] = state.log_prior
        accepted[i] = outcome.accepted
        log_ratios[i] = outcome.log_accept_ratio
        dims[i] = outcome.proposal_dim
        moves[i] = outcome.move
        if i % config.path_thin == 0:
            paths[i // config.path_thin] = state.path
        path_sum += state.path
        if true_path is not None and (i + 1) in checkpoints:
            rmse_at[i + 1] = _rmse(path_sum / (i + 1), true_path)
        if debug:
            logger.debug(f"Iteration {i + 1}: move={outcome.move} accepted={outcome.accepted}",
                         extra={"iteration": i + 1, "proposal_dim": outcome.proposal_dim,
                                "log_accept_ratio": outcome.log_accept_ratio})

    logger.info(f"Finished {algorithm.value} chain: acceptance rate {accepted.mean():.3f}, "
                f"repeated states {int(repeats.sum())}/{n_iters}")
    for checkpoint, value in sorted(rmse_at.items()):
        logger.info(f"MMSE path RMSE after {checkpoint} iterations: {value:.4f}")

    return ChainOutput(
        theta_names=model.free_params,
        thetas=thetas,
        log_mls=log_mls,
        log_priors=log_priors,
        accept_flags=accepted,
        log_accept_ratios=log_ratios,
        proposal_dims=dims,
        moves=moves,
        repeats=repeats,
        path_iters=path_iters,
        paths=paths,
        initial_state=initial_state,
        rmse_checkpoints=rmse_at,
        initial_rmse=initial_rmse,
        initial_system=initial_system,
    )
