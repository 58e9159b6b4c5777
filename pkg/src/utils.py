import numpy as np
from scipy.special import logsumexp


def sanitize_log_weights(log_weights: np.ndarray) -> np.ndarray:
    """Map NaN log-weights (overflowed dynamics) to -inf so they carry zero mass"""
    log_weights = np.asarray(log_weights, dtype=float)
    return np.where(np.isnan(log_weights), -np.inf, log_weights)


def log_mean_exp(log_values: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    """ln( (1/n) sum exp(v) ), -inf when every entry is -inf"""
    log_values = np.asarray(log_values, dtype=float)
    n = log_values.size if axis is None else log_values.shape[axis]
    with np.errstate(divide='ignore'):
        return logsumexp(log_values, axis=axis) - np.log(n)


def log_normalize(log_weights: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalize log-weights with max subtraction.

    Returns the normalized weights and the log of the unnormalized sum. When
    every weight is zero the sum is -inf and the weights are NaN; callers
    treat that as collapse.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    top = np.max(log_weights)
    if not np.isfinite(top):
        return np.full(log_weights.shape, np.nan), -np.inf
    weights = np.exp(log_weights - top)
    total = weights.sum()
    return weights / total, float(top + np.log(total))


def make_rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
