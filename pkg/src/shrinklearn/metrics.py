"""Reconstruction quality."""

import math

import numpy as np

from .errors import NumericalError, ValidationError

__all__ = ["snr_db", "mean_snr_db"]


def snr_db(x_true, x_hat):
    """``10 log10(||x||^2 / ||x - x_hat||^2)``.

    Returns ``math.inf`` when the estimate is exact; callers treat that as a
    failure to compare rather than a number. An error too large to represent
    gives ``-math.inf``; a NaN in the estimate raises :class:`NumericalError`.
    """
    x_true = np.asarray(x_true, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x_true.shape != x_hat.shape:
        raise ValidationError(f"shape mismatch: {x_true.shape} vs {x_hat.shape}")
    sig = float(x_true @ x_true)
    if sig == 0.0:
        raise ValidationError("SNR is undefined for an all-zero reference signal")
    if np.isnan(x_hat).any():
        raise NumericalError("estimate contains NaN")
    d = x_true - x_hat
    with np.errstate(over="ignore", invalid="ignore"):
        err = float(d @ d)
    if not err < math.inf:
        return -math.inf
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(sig / err)


def mean_snr_db(truths, estimates):
    return float(np.mean([snr_db(x, xh) for x, xh in zip(truths, estimates)]))
