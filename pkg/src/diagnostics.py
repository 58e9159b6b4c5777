"""Post-processing of chain output: MMSE paths, acceptance, autocorrelation and freezes."""
import logging

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


def _burn(n: int, burn_in: float | int) -> int:
    if isinstance(burn_in, float) and 0 <= burn_in < 1:
        return int(burn_in * n)
    return int(burn_in)


def mmse_path(paths: np.ndarray, burn_in: float | int = 0) -> np.ndarray:
    """Posterior-mean trajectory: average of the stored paths after burn-in.

    ``burn_in`` is either a fraction in [0, 1) or a number of stored paths.
    """
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    start = _burn(paths.shape[0], burn_in)
    if start >= paths.shape[0]:
        raise ValueError(f"burn_in {burn_in} leaves no paths out of {paths.shape[0]}")
    return paths[start:].mean(axis=0)


def rmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean((estimate - truth) ** 2)))


def acceptance_rate(accept_flags: np.ndarray, window: int | None = None) -> float | np.ndarray:
    """Overall acceptance rate, or one rate per consecutive block of ``window`` iterations.

    A trailing block shorter than ``window`` gets its own rate.
    """
    flags = np.asarray(accept_flags, dtype=float)
    if window is None:
        return float(flags.mean()) if flags.size else float("nan")
    if window < 1:
        raise ValueError(f"window must be positive, got {window}")
    return pd.Series(flags).groupby(np.arange(flags.size) // window).mean().to_numpy()


def autocorrelation(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocorrelation at lags 0..max_lag.

    A constant series has no variance to normalize by; it is reported as
    1 at lag 0 and 0 elsewhere.
    """
    x = np.asarray(series, dtype=float)
    max_lag = min(max_lag, x.size - 1)
    centered = x - x.mean()
    denom = float(np.dot(centered, centered))
    acf = np.zeros(max_lag + 1)
    acf[0] = 1.0
    if np.ptp(x) == 0:
        return acf
    for lag in range(1, max_lag + 1):
        acf[lag] = float(np.dot(centered[:-lag], centered[lag:])) / denom
    return acf


def integrated_ess(series: np.ndarray, max_lag: int | None = None) -> float:
    """Effective sample size n / (1 + 2 sum rho_k), truncated at the first negative rho"""
    x = np.asarray(series, dtype=float)
    if x.size < 2:
        return float(x.size)
    acf = autocorrelation(x, max_lag if max_lag is not None else min(x.size - 1, 1000))
    tau = 1.0
    for rho in acf[1:]:
        if rho < 0:
            break
        tau += 2.0 * rho
    return float(x.size / tau)


def freeze_runs(thetas: np.ndarray, paths: np.ndarray | None = None) -> dict[int, int]:
    """Histogram {run length: count} of maximal runs of identical consecutive states.

    With ``paths`` given, a state repeats only when both theta and the path do.
    """
    thetas = np.asarray(thetas, dtype=float)
    thetas = thetas.reshape(thetas.shape[0], -1)
    same = np.all(thetas[1:] == thetas[:-1], axis=1)
    if paths is not None:
        paths = np.asarray(paths, dtype=float)
        same &= np.all(paths[1:] == paths[:-1], axis=1)
    return freeze_runs_from_flags(np.concatenate([[False], same]))


def freeze_runs_from_flags(repeats: np.ndarray) -> dict[int, int]:
    """Same histogram from per-iteration repeat flags (True: state equals the previous one)"""
    repeats = np.asarray(repeats, dtype=bool)
    histogram: dict[int, int] = {}
    if repeats.size == 0:
        return histogram
    run = 1
    for flag in repeats[1:]:
        if flag:
            run += 1
        else:
            histogram[run] = histogram.get(run, 0) + 1
            run = 1
    histogram[run] = histogram.get(run, 0) + 1
    return dict(sorted(histogram.items()))


def longest_freeze(histogram: dict[int, int]) -> int:
    return max(histogram) if histogram else 0


def summarize_chain(frame: pd.DataFrame, theta_names: tuple[str, ...] = (), burn_in: float = 0.2,
                    max_lag: int = 100, acceptance_window: int | None = None) -> dict:
    """Summary block of a chain CSV: acceptance, posterior moments, ESS and freezes.

    ``acceptance_window`` defaults to a tenth of the chain.
    """
    theta_cols = [c for c in frame.columns if c.startswith("theta_")]
    names = list(theta_names) or theta_cols
    start = _burn(len(frame), burn_in)
    kept = frame.iloc[start:]

    parameters = {}
    for name, col in zip(names, theta_cols):
        values = kept[col].to_numpy(dtype=float)
        parameters[name] = {
            "mean": float(values.mean()),
            "sd": float(values.std(ddof=1)) if values.size > 1 else 0.0,
            "q05": float(np.quantile(values, 0.05)),
            "q95": float(np.quantile(values, 0.95)),
            "ess": integrated_ess(values, max_lag),
            "acf_lag1": float(autocorrelation(values, 1)[-1]) if values.size > 1 else 1.0,
        }

    if "repeat" in frame.columns:
        histogram = freeze_runs_from_flags(frame["repeat"].to_numpy(dtype=bool))
    else:
        histogram = freeze_runs(frame[theta_cols].to_numpy(dtype=float))

    accepted = frame["accepted"].to_numpy(dtype=bool)
    window = acceptance_window or max(1, len(frame) // 10)
    summary = {
        "iterations": int(len(frame)),
        "burn_in": start,
        "acceptance_rate": acceptance_rate(accepted),
        "acceptance_window": window,
        "acceptance_by_window": [float(v) for v in acceptance_rate(accepted, window)],
        "parameters": parameters,
        "longest_freeze": longest_freeze(histogram),
        "freeze_histogram": {str(k): v for k, v in histogram.items()},
    }
    if "move" in frame.columns:
        summary["moves"] = {str(k): int(v) for k, v in frame["move"].value_counts().items()}
    logger.debug("Chain summary computed", extra={"summary": summary})
    return summary
