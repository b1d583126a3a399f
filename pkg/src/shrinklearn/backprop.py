"""Gradient of the unrolled-ISTA squared error with respect to spline coefficients.

The reverse recursion walks the stored pre-activations from the last layer
down to the first:

    g  <- g + Psi(z^t)^T r
    r  <- S^T diag(phi'(z^t)) r

starting from ``r = x^T - x_true`` and ``g = 0``. Rows of ``Psi`` have at most
four nonzeros and are generated on the fly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ValidationError
from .ista import ista_forward
from .spline import basis_rows, eval_phi_prime

__all__ = [
    "cost",
    "adjoint",
    "gradient",
    "BatchResult",
    "evaluate_batch",
    "batch_gradient",
    "finite_difference_gradient",
    "max_relative_error",
]


def cost(x_true, x_est):
    """Half the squared Euclidean error."""
    x_true = np.asarray(x_true, dtype=float)
    x_est = np.asarray(x_est, dtype=float)
    if x_true.shape != x_est.shape:
        raise ValidationError(f"shape mismatch: {x_true.shape} vs {x_est.shape}")
    d = x_true - x_est
    return 0.5 * float(d @ d)


def _psi_transpose(nl, z, r, dense=False):
    size = 2 * nl.grid_halfwidth + 1
    cols, vals = basis_rows(nl, z)
    if dense:
        psi = np.zeros((z.size, size))
        np.add.at(psi, (np.arange(z.size)[:, None], cols), vals)
        return psi.T @ r
    return np.bincount(cols.ravel(), weights=(vals * r[:, None]).ravel(), minlength=size)


def adjoint(p, nl, trace, residual, dense=False):
    """Backpropagate a residual ``r^T`` through the trace; returns ``g^0``.

    With ``dense=True`` each basis matrix is materialized; only meant for
    cross-checking the sparse path.
    """
    r = np.array(residual, dtype=float)
    if r.shape != (p.n,) or trace.z_history.shape[1:] != (p.n,):
        raise ValidationError("trace, problem and residual dimensions disagree")
    g = np.zeros(2 * nl.grid_halfwidth + 1)
    for t in range(trace.depth - 1, -1, -1):
        z = trace.z_history[t]
        g += _psi_transpose(nl, z, r, dense)
        if t > 0:
            r = p.apply_S_transpose(eval_phi_prime(nl, z) * r)
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient")
    return g


def gradient(p, nl, trace, x_true):
    """Gradient of ``cost(x_true, x^T)`` with respect to the coefficients."""
    x_true = np.asarray(x_true, dtype=float)
    if x_true.shape != trace.x_final.shape:
        raise ValidationError(f"x_true has shape {x_true.shape}, expected {trace.x_final.shape}")
    return adjoint(p, nl, trace, trace.x_final - x_true)


@dataclass(frozen=True)
class BatchResult:
    gradient: np.ndarray
    costs: np.ndarray
    estimates: list


def _one(example, nl, T, x0):
    p, x_true = example
    trace = ista_forward(p, nl, x0, T)
    c = cost(x_true, trace.x_final)
    if not np.isfinite(c):
        raise DivergenceError("non-finite cost")
    return c, gradient(p, nl, trace, x_true), trace.x_final


def evaluate_batch(examples, nl, T, x0=None, threads=1):
    """Forward and backward passes over ``(problem, x_true)`` pairs.

    Per-example terms may be computed on a thread pool; they are always
    reduced in list order.
    """
    examples = list(examples)
    if not examples:
        raise ValidationError("empty batch")

    def run(item):
        i, ex = item
        try:
            return _one(ex, nl, T, x0)
        except (ValidationError, DivergenceError) as err:
            raise type(err)(f"example {i}: {err}") from err

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, enumerate(examples)))
    else:
        parts = [run(item) for item in enumerate(examples)]
    g = np.zeros(2 * nl.grid_halfwidth + 1)
    for _, gi, _ in parts:
        g += gi
    return BatchResult(
        g / len(parts),
        np.array([c for c, _, _ in parts]),
        [x for _, _, x in parts],
    )


def batch_gradient(examples, nl, T, x0=None, threads=1):
    """Mean gradient over a list of ``(problem, x_true)`` pairs."""
    return evaluate_batch(examples, nl, T, x0, threads).gradient


FD_RELATIVE_STEP = 3e-4
_STENCILS = {2: ((1, 0.5), (-1, -0.5)), 4: ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12))}


def finite_difference_gradient(p, nl, x_true, T, step=None, x0=None, indices=None, order=4):
    """Central differences of the cost over the coefficients.

    Independent of :func:`gradient`: it only runs forward passes. ``order``
    selects the 3-point (2) or 5-point (4) stencil. The default step is
    ``3e-4 * delta``: the cost varies on the scale of the grid spacing, so an
    absolute step would be too coarse for narrow grids and too fine for wide
    ones.
    """
    if order not in _STENCILS:
        raise ValidationError(f"order must be 2 or 4, got {order}")
    h = FD_RELATIVE_STEP * nl.delta if step is None else float(step)
    if not h > 0:
        raise ValidationError(f"step must be positive, got {step}")
    c0 = np.array(nl.coefficients)
    idx = range(c0.size) if indices is None else indices
    out = np.zeros(c0.size)
    for k in idx:
        total = 0.0
        for mult, weight in _STENCILS[order]:
            c = c0.copy()
            c[k] += mult * h
            total += weight * cost(x_true, ista_forward(p, nl.with_coefficients(c), x0, T).x_final)
        out[k] = total / h
    return out


def max_relative_error(analytic, numeric, floor=None):
    """Largest coordinatewise relative discrepancy.

    Each coordinate is measured against ``max(|analytic|, |numeric|, floor)``;
    ``floor`` defaults to ``1e-3 * max|numeric|`` so coordinates that are
    zero up to finite-difference roundoff do not dominate.
    """
    a = np.asarray(analytic, dtype=float)
    b = np.asarray(numeric, dtype=float)
    if floor is None:
        floor = 1e-3 * max(np.abs(b).max(), np.finfo(float).tiny)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
