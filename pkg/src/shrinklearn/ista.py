"""Problem setup and unrolled ISTA forward passes.

ISTA is written as

    z^t = S x^{t-1} + b,    x^t = phi(z^t),

with ``S = I - gamma H^T H`` and ``b = gamma H^T y``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ValidationError
from .spline import soft_threshold

logger = logging.getLogger(__name__)

__all__ = [
    "Problem",
    "IterateTrace",
    "build_problem",
    "max_eigenvalue",
    "ista_forward",
    "unroll",
    "soft_threshold_ista",
    "lasso_objective",
    "relative_change",
]


def max_eigenvalue(H, tol=1e-8, max_iter=1000):
    """Largest eigenvalue of ``H^T H`` by power iteration.

    Starts from the normalized all-ones vector so results are reproducible.
    Stops when the Rayleigh quotient changes by less than ``tol`` relative.
    """
    H = np.asarray(H, dtype=float)
    n = H.shape[1]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(max_iter):
        w = H.T @ (H @ v)
        lam_new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            # start vector in the null space; fall back to a dense solve
            return float(np.linalg.eigvalsh(H.T @ H)[-1])
        v = w / nrm
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    logger.warning("power iteration did not reach tol=%g in %d iterations", tol, max_iter)
    return lam


@dataclass(frozen=True, eq=False)
class Problem:
    """Measurements and the cached ISTA operator.

    ``S`` is ``None`` for the matrix-free form, in which case products with
    ``S`` are taken as ``x - gamma * H^T (H x)``.
    """

    H: np.ndarray
    y: np.ndarray
    gamma: float
    b: np.ndarray
    S: np.ndarray | None = None

    @property
    def n(self):
        return self.H.shape[1]

    @property
    def m(self):
        return self.H.shape[0]

    def apply_S(self, x):
        if self.S is not None:
            return self.S @ x
        return x - self.gamma * (self.H.T @ (self.H @ x))

    def apply_S_transpose(self, v):
        if self.S is not None:
            return self.S.T @ v
        return v - self.gamma * (self.H.T @ (self.H @ v))

    def check_consistency(self, atol=1e-12):
        """True when the cached S and b match H, y, gamma."""
        b = self.gamma * (self.H.T @ self.y)
        ok = np.allclose(self.b, b, rtol=0, atol=atol * max(1.0, np.abs(b).max()))
        if self.S is not None:
            S = np.eye(self.n) - self.gamma * (self.H.T @ self.H)
            ok = ok and np.allclose(self.S, S, rtol=0, atol=atol * max(1.0, np.abs(S).max()))
        return bool(ok)


def build_problem(H, y, gamma=None, dense=True):
    """Set up ``S``, ``b`` and the step size.

    ``gamma=None`` picks ``1 / lambda_max(H^T H)`` by power iteration; a
    number fixes it. ``dense=False`` skips materializing ``S``.
    """
    H = np.array(H, dtype=float)
    y = np.array(y, dtype=float)
    if H.ndim != 2 or H.size == 0:
        raise ValidationError(f"H must be a nonempty matrix, got shape {H.shape}")
    if y.shape != (H.shape[0],):
        raise ValidationError(f"y has shape {y.shape}, expected ({H.shape[0]},)")
    if gamma is None:
        L = max_eigenvalue(H)
        if L <= 0:
            raise ValidationError("H is zero; step size undefined")
        gamma = 1.0 / L
    elif not gamma > 0:
        raise ValidationError(f"fixed step size must be positive, got {gamma}")
    gamma = float(gamma)
    S = np.eye(H.shape[1]) - gamma * (H.T @ H) if dense else None
    for a in (H, y):
        a.setflags(write=False)
    b = gamma * (H.T @ y)
    b.setflags(write=False)
    if S is not None:
        S.setflags(write=False)
    return Problem(H, y, gamma, b, S)


@dataclass(frozen=True, eq=False)
class IterateTrace:
    """Pre-activations ``z^1..z^T`` (rows of ``z_history``) and ``x^T``."""

    z_history: np.ndarray
    x_final: np.ndarray
    x0: np.ndarray

    @property
    def depth(self):
        return self.z_history.shape[0]


def _initial(p, x0):
    if x0 is None:
        return np.zeros(p.n)
    x0 = np.array(x0, dtype=float)
    if x0.shape != (p.n,):
        raise ValidationError(f"x0 has shape {x0.shape}, expected ({p.n},)")
    return x0


def unroll(p, phi, x0=None, T=1, record=True):
    """Run ``T`` iterations with an arbitrary elementwise map ``phi``."""
    if T < 1:
        raise ValidationError(f"depth must be >= 1, got {T}")
    x0 = _initial(p, x0)
    zs = np.empty((T, p.n)) if record else None
    x = x0
    for t in range(T):
        # overflow is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            z = p.apply_S(x) + p.b
            x = phi(z)
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(x))):
            raise DivergenceError(f"non-finite iterate at iteration {t + 1}", iteration=t + 1)
        if record:
            zs[t] = z
    if not record:
        zs = np.empty((0, p.n))
    return IterateTrace(zs, x, x0)


def ista_forward(p, nl, x0=None, T=200):
    """Unrolled ISTA with a spline nonlinearity, keeping every ``z^t``."""
    return unroll(p, nl, x0, T)


def lasso_objective(p, x, lam):
    r = p.y - p.H @ x
    return 0.5 * float(r @ r) + lam * float(np.abs(x).sum())


def relative_change(x_new, x_old):
    with np.errstate(over="ignore", invalid="ignore"):
        diff = np.linalg.norm(x_new - x_old)
        if diff == 0.0:
            return 0.0
        ref = np.linalg.norm(x_old)
        return diff / ref if ref > 0 else np.inf


def soft_threshold_ista(p, lam, x0=None, T=1000, tol=1e-4, callback=None):
    """Plain ISTA for the LASSO with the exact soft-threshold prox.

    Stops after ``T`` iterations or once the relative change between
    successive iterates drops to ``tol``. ``callback(t, x)`` is called
    after every iteration.
    """
    if lam < 0:
        raise ValidationError(f"lambda must be nonnegative, got {lam}")
    thr = p.gamma * lam
    x = _initial(p, x0)
    for t in range(1, T + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            x_new = soft_threshold(p.apply_S(x) + p.b, thr)
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(f"non-finite iterate at iteration {t}", iteration=t)
        if callback is not None:
            callback(t, x_new)
        done = relative_change(x_new, x) <= tol
        x = x_new
        if done:
            break
    return x
