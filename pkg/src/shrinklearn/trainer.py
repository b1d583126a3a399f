"""Online projected-gradient learning of the ISTA nonlinearity.

Each training iteration draws a batch uniformly with replacement, backpropagates
the squared error through the unrolled network and takes one projected step
``c <- proj(c - mu * grad)``. All randomness comes from a single generator
seeded by ``TrainConfig.seed``: first the probe subset is drawn (without
replacement), then one batch of indices per iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .backprop import evaluate_batch
from .errors import DivergenceError, ValidationError
from .ista import build_problem, ista_forward, soft_threshold_ista, unroll
from .metrics import mean_snr_db, snr_db
from .spline import SplineNonlinearity, Unconstrained, fit_soft_threshold, soft_threshold

logger = logging.getLogger(__name__)

__all__ = [
    "FixedRange",
    "Calibrated",
    "TrainConfig",
    "TrainReport",
    "prepare_examples",
    "calibrate_grid",
    "tune_lasso_lambda",
    "tune_depth_lambda",
    "initial_nonlinearity",
    "train",
]

CALIBRATION_SAMPLE = 32
DEFAULT_LAMBDAS = tuple(np.round(np.linspace(0.005, 0.15, 30), 4))


@dataclass(frozen=True)
class FixedRange:
    lo: float
    hi: float


@dataclass(frozen=True)
class Calibrated:
    safety_factor: float = 1.5


@dataclass(frozen=True)
class TrainConfig:
    depth: int = 200
    learning_rate: float = 1e-4
    batch_size: int = 1
    iterations: int = 1000
    constraint: object = field(default_factory=Unconstrained)
    grid_K: int = 200
    grid_range: object = field(default_factory=Calibrated)
    init_lambda: float | None = None
    lambda_candidates: tuple = DEFAULT_LAMBDAS
    probe_size: int = 8
    probe_every: int = 1
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")
        if self.grid_K < 2:
            raise ValidationError(f"grid_K must be >= 2, got {self.grid_K}")
        if not self.learning_rate >= 0:
            raise ValidationError(f"learning rate must be nonnegative, got {self.learning_rate}")
        if self.batch_size < 1 or self.depth < 1 or self.probe_every < 1:
            raise ValidationError("batch_size, depth and probe_every must be >= 1")


@dataclass(frozen=True, eq=False)
class TrainReport:
    """Outcome of :func:`train`.

    ``snr_per_iteration[i]`` is the mean SNR of batch ``i`` under the
    coefficients it was differentiated at; ``probe_snr`` is measured on the
    fixed probe subset after the updates listed in ``probe_iterations``
    (iteration 0 is the initialization).
    """

    learned: SplineNonlinearity
    initial: SplineNonlinearity
    lam: float
    snr_per_iteration: np.ndarray
    mse_per_iteration: np.ndarray
    probe_iterations: np.ndarray
    probe_snr: np.ndarray
    final_train_mse: float


def prepare_examples(instances, dense=True):
    """Pair each instance's problem (step size from power iteration) with its signal."""
    return [(build_problem(inst.H, inst.y, dense=dense), inst.x_true) for inst in instances]


def calibrate_grid(examples, K, policy, lam=0.0, depth=200):
    """Grid spacing and range for the spline expansion.

    Returns ``(delta, (lo, hi))``. A calibrated range runs soft-threshold ISTA
    on up to 32 examples and takes ``R = safety * max |z|`` over every
    pre-activation seen.
    """
    if isinstance(policy, FixedRange):
        if not policy.hi > policy.lo:
            raise ValidationError(f"empty range [{policy.lo}, {policy.hi}]")
        return (policy.hi - policy.lo) / (2 * K), (policy.lo, policy.hi)
    examples = list(examples)
    if not examples:
        raise ValidationError("cannot calibrate on an empty training set")
    zmax = 0.0
    for p, _ in examples[:CALIBRATION_SAMPLE]:
        thr = p.gamma * lam
        tr = unroll(p, lambda z: soft_threshold(z, thr), None, depth)
        zmax = max(zmax, float(np.abs(tr.z_history).max()))
    R = policy.safety_factor * zmax
    if not R > 0:
        raise ValidationError("degenerate dynamic range: every pre-activation is zero")
    return R / K, (-R, R)


def tune_lasso_lambda(examples, candidates, max_iter=1000, tol=1e-4, solver=None):
    """Candidate with the best mean SNR of the LASSO solution; ties go to the smaller.

    ``solver(problem, lam)`` returns an estimate; the default is plain ISTA
    run to ``max_iter`` iterations or relative change ``tol``.
    """
    candidates = sorted(float(c) for c in candidates)
    if not candidates:
        raise ValidationError("no candidate regularization parameters")
    examples = list(examples)
    if solver is None:
        def solver(p, lam):
            return soft_threshold_ista(p, lam, T=max_iter, tol=tol)

    best, best_snr = None, -np.inf
    for lam in candidates:
        snr = mean_snr_db([x for _, x in examples], [solver(p, lam) for p, _ in examples])
        logger.debug("lambda=%g mean SNR %.3f dB", lam, snr)
        if snr > best_snr:
            best, best_snr = lam, snr
    return best


def tune_depth_lambda(examples, candidates, depth):
    """Soft-threshold parameter that is best for ISTA stopped at ``depth`` layers."""
    return tune_lasso_lambda(
        examples, candidates, solver=lambda p, lam: soft_threshold_ista(p, lam, T=depth, tol=0.0)
    )


def initial_nonlinearity(examples, cfg, lam):
    """Soft thresholding at ``lam * mean(gamma)`` fitted on the configured grid."""
    delta, _ = calibrate_grid(examples, cfg.grid_K, cfg.grid_range, lam, cfg.depth)
    gamma = float(np.mean([p.gamma for p, _ in examples]))
    nl = fit_soft_threshold(cfg.grid_K, delta, lam * gamma)
    c0 = cfg.constraint.project(nl.coefficients)
    return nl.with_coefficients(c0)


def _probe_snr(examples, nl, depth):
    xs = [ista_forward(p, nl, None, depth).x_final for p, _ in examples]
    return mean_snr_db([x for _, x in examples], xs)


def train(examples, cfg, initial=None):
    """Learn spline coefficients by online projected gradient descent.

    ``examples`` is a list of ``(problem, x_true)`` pairs. Unless ``initial``
    is given, the nonlinearity starts from soft thresholding with
    ``cfg.init_lambda``; when that is ``None`` it is tuned for ISTA at the
    configured depth.
    """
    examples = list(examples)
    if not examples:
        raise ValidationError("empty training set")
    lam = cfg.init_lambda
    if initial is None:
        if lam is None:
            lam = tune_depth_lambda(examples, cfg.lambda_candidates, cfg.depth)
            logger.info("tuned LASSO lambda = %g", lam)
        initial = initial_nonlinearity(examples, cfg, lam)
    rng = np.random.default_rng(cfg.seed)
    L = len(examples)
    probe = [examples[i] for i in rng.choice(L, size=min(cfg.probe_size, L), replace=False)]

    nl = initial
    batch_snr = np.empty(cfg.iterations)
    batch_mse = np.empty(cfg.iterations)
    probe_iters = [0]
    probe_snr = [_probe_snr(probe, nl, cfg.depth)]
    for i in range(1, cfg.iterations + 1):
        batch = [examples[j] for j in rng.integers(0, L, size=cfg.batch_size)]
        try:
            res = evaluate_batch(batch, nl, cfg.depth, threads=cfg.threads)
        except DivergenceError as err:
            raise DivergenceError(
                f"training diverged at iteration {i}: {err}", iteration=i, snapshot=nl
            ) from err
        batch_snr[i - 1] = np.mean([snr_db(x, xh) for (_, x), xh in zip(batch, res.estimates)])
        batch_mse[i - 1] = 2.0 * res.costs.mean() / batch[0][1].size
        c = cfg.constraint.project(nl.coefficients - cfg.learning_rate * res.gradient)
        if not np.all(np.isfinite(c)):
            raise DivergenceError(
                f"non-finite coefficients at iteration {i}", iteration=i, snapshot=nl
            )
        nl = nl.with_coefficients(c)
        if i % cfg.probe_every == 0:
            probe_iters.append(i)
            probe_snr.append(_probe_snr(probe, nl, cfg.depth))
        if i % 50 == 0:
            logger.info("iteration %d: batch SNR %.2f dB, probe SNR %.2f dB",
                        i, batch_snr[i - 1], probe_snr[-1])

    final = [ista_forward(p, nl, None, cfg.depth).x_final for p, _ in examples]
    final_mse = float(np.mean([np.mean((x - xh) ** 2) for (_, x), xh in zip(examples, final)]))
    return TrainReport(
        learned=nl,
        initial=initial,
        lam=lam,
        snr_per_iteration=batch_snr,
        mse_per_iteration=batch_mse,
        probe_iterations=np.array(probe_iters),
        probe_snr=np.array(probe_snr),
        final_train_mse=final_mse,
    )
