"""Reference estimators: LASSO solved by FISTA and the support-aware genie."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, NumericalError, ValidationError
from .ista import relative_change
from .spline import soft_threshold

__all__ = ["EstimatorResult", "fista_lasso", "genie_mmse"]


@dataclass(frozen=True, eq=False)
class EstimatorResult:
    x_hat: np.ndarray
    iterations_used: int
    converged: bool


def fista_lasso(p, lam, max_iter=1000, tol=1e-4, x0=None, callback=None):
    """Accelerated proximal gradient for ``0.5||y - Hx||^2 + lam ||x||_1``.

    Uses the step size cached in ``p``. Convergence is declared when the
    relative change between successive iterates is at most ``tol``.
    """
    if lam < 0:
        raise ValidationError(f"lambda must be nonnegative, got {lam}")
    thr = p.gamma * lam
    x = np.zeros(p.n) if x0 is None else np.array(x0, dtype=float)
    v = x.copy()
    t = 1.0
    for k in range(1, max_iter + 1):
        x_new = soft_threshold(p.apply_S(v) + p.b, thr)
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(f"non-finite iterate at iteration {k}", iteration=k)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        v = x_new + ((t - 1.0) / t_new) * (x_new - x)
        done = relative_change(x_new, x) <= tol
        x, t = x_new, t_new
        if callback is not None:
            callback(k, x)
        if done:
            return EstimatorResult(x, k, True)
    return EstimatorResult(x, max_iter, False)


def genie_mmse(inst, active_mean=0.0, active_var=1.0):
    """Posterior mean of ``x`` given its true support.

    On the support the prior is Gaussian, so the estimate is the linear MMSE
    solution ``mean + (H_S^T H_S + s2/v I)^{-1} H_S^T (y - H_S mean)``;
    off the support it is zero.
    """
    x_hat = np.zeros(inst.H.shape[1])
    S = inst.support
    if S.size == 0:
        return EstimatorResult(x_hat, 0, True)
    Hs = inst.H[:, S]
    A = Hs.T @ Hs + (inst.noise_var / active_var) * np.eye(S.size)
    rhs = Hs.T @ (inst.y - active_mean * Hs.sum(axis=1))
    try:
        if inst.noise_var == 0 and np.linalg.matrix_rank(Hs) < S.size:
            raise np.linalg.LinAlgError("rank deficient")
        x_hat[S] = active_mean + np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"singular support system ({err}); noise_var is zero") from err
    return EstimatorResult(x_hat, 0, True)
