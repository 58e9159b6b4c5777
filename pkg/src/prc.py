"""Partial rejection control (PRC) of particle mutations.

A proposed move whose pre-PRC incremental weight w~ falls below the
threshold c_n is rejected with probability 1 - min{1, w~/c_n} and redrawn.
Accepted particles carry the corrected weight w~ r(c_n, x_prev) / p, which
equals r(c_n, x_prev) max(w~, c_n).

Everything here works on log weights and log thresholds; ln c_n = -inf
encodes c_n = 0, for which the kernel is the plain proposal.
"""
from dataclasses import dataclass
import logging
import math
from typing import Callable, Optional

import numpy as np

from errors import PrcError
from schema import PrcConfig, RejectionScope, ThresholdPolicy

logger = logging.getLogger(__name__)

ProposeFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]
LogWeightFn = Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]
RedrawFn = Callable[[int, np.random.Generator], tuple[np.ndarray, np.ndarray]]


@dataclass
class PrcResult:
    x: np.ndarray
    log_w_tilde: np.ndarray
    attempts: np.ndarray
    capped: np.ndarray
    x_prev: np.ndarray
    ancestors: Optional[np.ndarray] = None


def _accept(log_w_tilde: np.ndarray, log_c_n: float, rng: np.random.Generator) -> np.ndarray:
    # u < min{1, w~/c}  <=>  ln u < ln w~ - ln c
    log_p = np.minimum(0.0, log_w_tilde - log_c_n)
    return np.log(rng.uniform(size=log_w_tilde.shape)) < log_p


def prc_propagate(
    x_prev: np.ndarray,
    log_c_n: float,
    propose_fn: ProposeFn,
    log_weight_fn: LogWeightFn,
    config: PrcConfig,
    rng: np.random.Generator,
    first_attempt: tuple[np.ndarray, np.ndarray] | None = None,
    ancestors: np.ndarray | None = None,
    redraw_ancestors: RedrawFn | None = None,
) -> PrcResult:
    """Mutate a batch of particles through the PRC kernel.

    Each particle proposes from propose_fn until a draw is accepted with
    probability min{1, w~/c_n}. The draw made at attempt ``max_attempts`` is
    accepted unconditionally and flagged in ``capped``. With
    ``redraw_ancestors`` a rejection also redraws the particle's ancestor.
    """
    x_prev = np.array(x_prev, dtype=float, copy=True)
    ancestors = None if ancestors is None else np.array(ancestors, copy=True)
    if first_attempt is None:
        x = propose_fn(x_prev, rng)
        log_w = log_weight_fn(x_prev, x, rng)
    else:
        x = np.array(first_attempt[0], dtype=float, copy=True)
        log_w = np.array(first_attempt[1], dtype=float, copy=True)

    n = x.shape[0]
    attempts = np.ones(n, dtype=int)
    capped = np.zeros(n, dtype=bool)
    if log_c_n == -np.inf:
        return PrcResult(x, log_w, attempts, capped, x_prev, ancestors)
    if config.max_attempts == 1:
        capped[:] = True
        return PrcResult(x, log_w, attempts, capped, x_prev, ancestors)

    pending = ~_accept(log_w, log_c_n, rng)
    while pending.any():
        idx = np.flatnonzero(pending)
        if redraw_ancestors is not None:
            new_anc, new_prev = redraw_ancestors(idx.size, rng)
            if ancestors is not None:
                ancestors[idx] = new_anc
            x_prev[idx] = new_prev
        x[idx] = propose_fn(x_prev[idx], rng)
        log_w[idx] = log_weight_fn(x_prev[idx], x[idx], rng)
        attempts[idx] += 1

        last = attempts[idx] >= config.max_attempts
        capped[idx[last]] = True
        pending[idx[last]] = False
        tested = idx[~last]
        if tested.size:
            pending[tested[_accept(log_w[tested], log_c_n, rng)]] = False

    return PrcResult(x, log_w, attempts, capped, x_prev, ancestors)


def corrected_weight(w_tilde: float, c_n: float, r_hat: float | None, r_cancels: bool = False) -> float:
    """Final unnormalized weight w~ r_hat / p with p = min{1, w~/c_n}, i.e. r_hat max(w~, c_n)"""
    if r_hat is None:
        if c_n > 0 and not r_cancels:
            raise PrcError("A positive PRC threshold requires an estimate of r(c_n, x_prev)")
        r_hat = 1.0
    return r_hat * max(w_tilde, c_n)


def corrected_log_weight(log_w_tilde: np.ndarray, log_c_n: float, log_r_hat: np.ndarray | float) -> np.ndarray:
    """ln of r_hat max(w~, c_n), the closed form of w~ r_hat / p"""
    return log_r_hat + np.maximum(log_w_tilde, log_c_n)


def estimate_r(
    log_c_n: float,
    x_prev: np.ndarray,
    propose_fn: ProposeFn,
    log_weight_fn: LogWeightFn,
    M: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Monte Carlo estimate of r(c_n, x_prev) = E_q[min{1, w~(x)/c_n}], one per x_prev"""
    x_prev = np.asarray(x_prev, dtype=float)
    if log_c_n == -np.inf:
        return np.ones(x_prev.shape[0])
    if M < 1:
        raise PrcError(f"estimate_r needs M >= 1, got {M}")
    repeated = np.repeat(x_prev, M)
    draws = propose_fn(repeated, rng)
    log_w = log_weight_fn(repeated, draws, rng)
    accept_prob = np.exp(np.minimum(0.0, log_w - log_c_n))
    return accept_prob.reshape(x_prev.shape[0], M).mean(axis=1)


def adapt_threshold(pre_prc_weights: np.ndarray, alpha: float) -> float:
    """Lower empirical alpha-quantile: the order statistic at index ceil(alpha N).

    Order statistics commute with monotone maps, so the same call on log
    weights returns ln c_n.
    """
    weights = np.sort(np.asarray(pre_prc_weights, dtype=float))
    if not 0 <= alpha < 1:
        raise PrcError(f"alpha must lie in [0, 1), got {alpha}")
    rank = max(1, math.ceil(round(alpha * weights.size, 9)))
    return float(weights[rank - 1])


def threshold_for_step(config: PrcConfig, log_first_weights: np.ndarray) -> float:
    """ln c_n for one filter step under the configured policy"""
    if config.threshold_policy == ThresholdPolicy.DISABLED:
        return -np.inf
    if config.threshold_policy == ThresholdPolicy.FIXED:
        return math.log(config.c) if config.c > 0 else -np.inf
    # -inf here (too many zero weights) means c_n = 0
    return adapt_threshold(log_first_weights, config.alpha)


def redraws_ancestor(config: PrcConfig) -> bool:
    return config.rejection_scope == RejectionScope.ANCESTOR_AND_MOVE
