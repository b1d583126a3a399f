"""Cubic B-spline pointwise nonlinearities.

A nonlinearity is expanded on a uniform grid of cardinal cubic B-splines,

    phi(z) = sum_{k=-K}^{K} c_k * beta3(z / delta - k),

and its derivative follows from the degree-reduction rule
``d/dz beta3(u) = beta2(u + 1/2) - beta2(u - 1/2)``.

Abscissae are clamped to ``[-(K-2) delta, (K-2) delta]`` before expansion, so
``phi`` is constant and ``phi'`` is zero outside that interval.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from .errors import ValidationError

__all__ = [
    "SplineNonlinearity",
    "Unconstrained",
    "Box",
    "OddSymmetric",
    "bspline3",
    "bspline2",
    "eval_phi",
    "eval_phi_prime",
    "eval_basis_row",
    "basis_rows",
    "fit_soft_threshold",
    "soft_threshold",
    "project_coefficients",
    "save_model",
    "load_model",
]

MODEL_FORMAT = "shrinklearn-spline"
MODEL_VERSION = 1


def bspline3(z):
    """Centered cubic B-spline, evaluated elementwise."""
    a = np.abs(np.asarray(z, dtype=float))
    out = np.where(
        a < 1.0,
        2.0 / 3.0 - a**2 + a**3 / 2.0,
        np.where(a < 2.0, (2.0 - a) ** 3 / 6.0, 0.0),
    )
    return out[()] if out.ndim == 0 else out


def bspline2(z):
    """Centered quadratic B-spline, evaluated elementwise."""
    a = np.abs(np.asarray(z, dtype=float))
    out = np.where(
        a < 0.5,
        0.75 - a**2,
        np.where(a < 1.5, 9.0 / 8.0 - 0.5 * a * (3.0 - a), 0.0),
    )
    return out[()] if out.ndim == 0 else out


def soft_threshold(z, threshold):
    return np.sign(z) * np.maximum(np.abs(z) - threshold, 0.0)


@dataclass(frozen=True, eq=False)
class SplineNonlinearity:
    """Learnable pointwise nonlinearity.

    ``coefficients[j]`` holds c_k for ``k = j - grid_halfwidth``.
    ``init_threshold`` is metadata recording the soft threshold the
    coefficients were fitted to, if any.
    """

    coefficients: np.ndarray
    delta: float
    grid_halfwidth: int
    degree: int = 3
    init_threshold: float | None = field(default=None)

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        K = int(self.grid_halfwidth)
        if K < 2:
            raise ValidationError(f"grid_halfwidth must be >= 2, got {K}")
        if not self.delta > 0 or not np.isfinite(self.delta):
            raise ValidationError(f"delta must be positive and finite, got {self.delta}")
        if c.shape != (2 * K + 1,):
            raise ValidationError(
                f"expected {2 * K + 1} coefficients for K={K}, got shape {c.shape}"
            )
        if not np.all(np.isfinite(c)):
            raise ValidationError("coefficients must be finite")
        if self.degree != 3:
            raise ValidationError("only cubic splines (degree 3) are supported")

    @property
    def knots(self):
        K = self.grid_halfwidth
        return self.delta * np.arange(-K, K + 1)

    @property
    def clamp_limit(self):
        return (self.grid_halfwidth - 2) * self.delta

    def with_coefficients(self, coefficients):
        return SplineNonlinearity(
            coefficients, self.delta, self.grid_halfwidth, self.degree, self.init_threshold
        )

    def __call__(self, z):
        return eval_phi(self, z)

    def derivative(self, z):
        return eval_phi_prime(self, z)


def _clamped_abscissa(nl, z):
    z = np.asarray(z, dtype=float)
    lim = nl.clamp_limit
    return np.clip(z, -lim, lim) / nl.delta


def _support(u):
    # Indices k (relative to the grid center) of the four splines that can
    # be nonzero at u; shape (..., 4).
    base = np.floor(u).astype(np.int64)
    return base[..., None] + np.arange(-1, 3)


def basis_rows(nl, z):
    """Sparse rows of the basis matrix for a vector of abscissae.

    Returns ``(cols, vals)`` of shape ``(n, 4)`` where ``cols`` are indices
    into ``nl.coefficients`` and ``vals`` the matching basis values.
    """
    u = _clamped_abscissa(nl, np.atleast_1d(z))
    ks = _support(u)
    vals = bspline3(u[..., None] - ks)
    return ks + nl.grid_halfwidth, vals


def eval_basis_row(nl, z):
    """Nonzero entries of one basis row as ``(k, value)`` pairs."""
    cols, vals = basis_rows(nl, float(z))
    K = nl.grid_halfwidth
    return [(int(j) - K, float(v)) for j, v in zip(cols[0], vals[0]) if v != 0.0]


def eval_phi(nl, z):
    z = np.asarray(z, dtype=float)
    cols, vals = basis_rows(nl, z.ravel())
    out = np.sum(nl.coefficients[cols] * vals, axis=-1).reshape(z.shape)
    return out[()] if out.ndim == 0 else out


def eval_phi_prime(nl, z):
    z = np.asarray(z, dtype=float)
    flat = z.ravel()
    u = _clamped_abscissa(nl, flat)
    ks = _support(u)
    d = u[:, None] - ks
    vals = bspline2(d + 0.5) - bspline2(d - 0.5)
    out = np.sum(nl.coefficients[ks + nl.grid_halfwidth] * vals, axis=-1) / nl.delta
    out[np.abs(flat) > nl.clamp_limit] = 0.0
    out = out.reshape(z.shape)
    return out[()] if out.ndim == 0 else out


def fit_soft_threshold(K, delta, threshold):
    """Cubic spline interpolating soft thresholding at every interior knot.

    Knots ``j * delta`` for ``|j| <= K - 2`` are interpolated exactly, with
    natural (zero second derivative) end conditions at the clamp limits.
    The two outermost coefficients on each side are then extended linearly,
    which keeps exact reproduction of linear functions.
    """
    K = int(K)
    if K < 2:
        raise ValidationError(f"K must be >= 2, got {K}")
    if not delta > 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    if threshold < 0:
        raise ValidationError(f"threshold must be nonnegative, got {threshold}")

    # Unknowns c_k for k = -K+1 .. K-1; rows: natural BC, knots -K+2..K-2, natural BC.
    n = 2 * K - 1
    j = np.arange(-K + 2, K - 1)
    rhs = np.zeros(n)
    rhs[1:-1] = soft_threshold(j * delta, threshold)
    ab = np.zeros((5, n))  # solve_banded layout, (l, u) = (2, 2)
    ab[2, :] = 4.0 / 6.0
    ab[1, 1:] = 1.0 / 6.0
    ab[3, :-1] = 1.0 / 6.0
    # natural BC rows: c_{-K+1} - 2 c_{-K+2} + c_{-K+3} = 0, mirrored at the top
    ab[2, 0], ab[1, 1], ab[0, 2] = 1.0, -2.0, 1.0
    ab[2, -1], ab[3, -2], ab[4, -3] = 1.0, -2.0, 1.0
    if K == 2:
        # one interior knot; the two end conditions coincide, so pin the
        # outer pair to the target and solve the knot equation for c_0
        inner = soft_threshold(np.array([-1.0, 0.0, 1.0]) * delta, threshold)
        inner[1] = 1.5 * rhs[1] - 0.25 * (inner[0] + inner[2])
    else:
        inner = solve_banded((2, 2), ab, rhs)

    c = np.empty(2 * K + 1)
    c[1:-1] = inner
    c[0] = 2.0 * c[1] - c[2]
    c[-1] = 2.0 * c[-2] - c[-3]
    c = 0.5 * (c - c[::-1])  # enforce exact odd symmetry
    return SplineNonlinearity(c, float(delta), K, init_threshold=float(threshold))


@dataclass(frozen=True)
class Unconstrained:
    def project(self, c):
        return np.array(c, dtype=float)


@dataclass(frozen=True)
class Box:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValidationError(f"empty box [{self.lo}, {self.hi}]")

    def project(self, c):
        return np.clip(np.asarray(c, dtype=float), self.lo, self.hi)


@dataclass(frozen=True)
class OddSymmetric:
    """Coefficients with c_{-k} = -c_k."""

    def project(self, c):
        c = np.asarray(c, dtype=float)
        return 0.5 * (c - c[::-1])


def project_coefficients(c, constraint=None):
    """Euclidean projection of a coefficient vector onto a constraint set."""
    if constraint is None:
        constraint = Unconstrained()
    return constraint.project(c)


def parse_constraint(text):
    """Parse ``none``, ``odd`` or ``box:LO:HI``."""
    text = text.strip().lower()
    if text in ("none", "unconstrained"):
        return Unconstrained()
    if text in ("odd", "oddsymmetric", "odd-symmetric"):
        return OddSymmetric()
    if text.startswith("box:"):
        try:
            _, lo, hi = text.split(":")
            return Box(float(lo), float(hi))
        except ValueError:
            pass
    raise ValidationError(f"unrecognised constraint {text!r}")


def save_model(nl, path):
    """Write a nonlinearity as JSON. Floats are stored with round-trip precision."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "degree": nl.degree,
        "grid_halfwidth": nl.grid_halfwidth,
        "delta": float(nl.delta),
        "init_threshold": None if nl.init_threshold is None else float(nl.init_threshold),
        "coefficients": [float(v) for v in nl.coefficients],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValidationError(f"{path}: not a {MODEL_FORMAT} v{MODEL_VERSION} file")
    return SplineNonlinearity(
        np.array(doc["coefficients"], dtype=float),
        doc["delta"],
        doc["grid_halfwidth"],
        doc["degree"],
        doc["init_threshold"],
    )
