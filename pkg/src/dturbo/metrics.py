"""Reconstruction metrics: NMSE, PSNR, error moments and QQ tables."""

import csv

import numpy as np
from scipy import stats


def nmse(x_hat, x):
    """``10 log10(|x_hat - x|^2 / |x|^2)``; ``-inf`` for a perfect estimate."""
    x_hat = np.asarray(x_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch: {x_hat.shape} vs {x.shape}")
    ref = float(x @ x) if x.ndim == 1 else float(np.sum(x**2))
    if ref == 0:
        raise ValueError("NMSE undefined for an all-zero reference")
    err = float(np.sum((x_hat - x) ** 2))
    if err == 0:
        return -np.inf
    return 10.0 * np.log10(err / ref)


def nmse_linear(x_hat, x):
    return float(np.sum((np.asarray(x_hat) - x) ** 2) / np.sum(np.asarray(x) ** 2))


def psnr(x_hat, x, max_value=255.0):
    """``10 log10(max_value^2 / MSE)``; ``+inf`` when the MSE is zero."""
    if not max_value > 0:
        raise ValueError("max_value must be positive")
    x_hat = np.asarray(x_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch: {x_hat.shape} vs {x.shape}")
    mse = float(np.mean((x_hat - x) ** 2))
    if mse == 0:
        return np.inf
    return 10.0 * np.log10(max_value**2 / mse)


def finite_or_none(value):
    """JSON-friendly float: infinities and NaN become ``None``."""
    if value is None:
        return None
    value = float(value)
    return value if np.isfinite(value) else None


def error_moments(err):
    """Sample skewness and (non-excess) kurtosis of an error vector."""
    err = np.asarray(err, dtype=float)
    return float(stats.skew(err)), float(stats.kurtosis(err, fisher=False))


def gaussian_moments_ok(skew, kurt, skew_tol=0.15, kurt_tol=0.3):
    return abs(skew) <= skew_tol and abs(kurt - 3.0) <= kurt_tol


def qq_data(errors):
    """Standard-normal QQ pairs ``(theoretical, empirical)`` for standardized errors.

    Errors are centred and scaled to unit sample standard deviation, sorted,
    and paired with normal quantiles at the plotting positions ``(i - 0.5)/n``.
    """
    e = np.asarray(errors, dtype=float).ravel()
    if e.size < 2:
        raise ValueError("need at least two errors")
    sd = e.std()
    if not sd > 0:
        raise ValueError("errors have zero variance")
    empirical = np.sort((e - e.mean()) / sd)
    n = e.size
    theoretical = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    return np.column_stack([theoretical, empirical])


def write_qq_csv(path, table):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theoretical", "empirical"])
        writer.writerows(table.tolist())


def qq_max_gap(table):
    """Largest QQ deviation measured on the probability scale.

    ``max |Phi(empirical) - Phi(theoretical)|``, a Kolmogorov-type distance
    that, unlike the raw quantile gap, is not dominated by the extreme tails.
    """
    table = np.asarray(table, dtype=float)
    return float(np.max(np.abs(stats.norm.cdf(table[:, 1]) - stats.norm.cdf(table[:, 0]))))
