"""Monte Carlo comparison of estimators across measurement rates.

For every rate a training split is generated, the LASSO parameter is tuned
and a nonlinearity is learned; all estimators are then scored on a disjoint
test split. Training and test instances of rate number ``i`` come from seed
domains ``2i`` and ``2i + 1`` respectively.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import fista_lasso, genie_mmse
from .datagen import TEST, TRAIN, SignalPrior, make_dataset
from .errors import NumericalError, ValidationError
from .ista import ista_forward, soft_threshold_ista
from .metrics import snr_db
from .spline import soft_threshold
from .trainer import (
    DEFAULT_LAMBDAS,
    Calibrated,
    TrainConfig,
    prepare_examples,
    train,
    tune_depth_lambda,
    tune_lasso_lambda,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ESTIMATORS",
    "BenchConfig",
    "TrialRecord",
    "SummaryRow",
    "SweepResult",
    "snr_db",
    "run_sweep",
    "summarize",
    "write_results_csv",
    "write_summary_csv",
    "export_shape_csv",
]

ESTIMATORS = ("lasso", "ista", "learned", "genie")
UNAVAILABLE = {"gamp": "GAMP is not implemented in this package"}
DEFAULT_RATES = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
RESULT_COLUMNS = ("estimator", "m_over_n", "trial", "snr_db", "wall_ms")
SUMMARY_COLUMNS = ("estimator", "m_over_n", "mean_snr_db", "stderr_db", "n_trials")
MAX_FAILURE_FRACTION = 0.10


@dataclass(frozen=True)
class BenchConfig:
    n: int = 512
    rho: float = 0.2
    snr_db: float = 30.0
    n_train: int = 200
    depth: int = 200
    grid_K: int = 4000
    iterations: int = 1000
    learning_rate: float = 1e-4
    batch_size: int = 1
    safety_factor: float = 1.5
    lambda_candidates: tuple = DEFAULT_LAMBDAS
    fista_max_iter: int = 1000
    fista_tol: float = 1e-4
    probe_size: int = 8
    probe_every: int = 1
    fixed_h: bool = False
    seed: int = 0
    threads: int = 1
    record_timing: bool = False

    def train_config(self, lam):
        return TrainConfig(
            depth=self.depth,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            iterations=self.iterations,
            grid_K=self.grid_K,
            grid_range=Calibrated(self.safety_factor),
            init_lambda=lam,
            probe_size=self.probe_size,
            probe_every=self.probe_every,
            seed=self.seed,
            threads=self.threads,
        )


@dataclass(frozen=True)
class TrialRecord:
    estimator: str
    m_over_n: float
    trial_index: int
    snr_db: float
    wall_time: float = 0.0
    failed: bool = False


@dataclass(frozen=True)
class SummaryRow:
    estimator: str
    m_over_n: float
    mean_snr_db: float
    stderr_db: float
    n_trials: int


@dataclass
class SweepResult:
    records: list
    summary: list
    reports: dict = field(default_factory=dict)
    lasso_lambdas: dict = field(default_factory=dict)
    depth_lambdas: dict = field(default_factory=dict)

    def mean(self, estimator, rate):
        for row in self.summary:
            if row.estimator == estimator and row.m_over_n == rate:
                return row
        raise KeyError((estimator, rate))

    def snrs(self, estimator, rate):
        return np.array([r.snr_db for r in self.records
                         if r.estimator == estimator and r.m_over_n == rate and not r.failed])


def _estimate(name, inst, problem, ctx, cfg):
    if name == "lasso":
        return fista_lasso(problem, ctx["lasso_lambda"], cfg.fista_max_iter, cfg.fista_tol).x_hat
    if name == "ista":
        return soft_threshold_ista(problem, ctx["depth_lambda"], T=cfg.depth, tol=0.0)
    if name == "learned":
        return ista_forward(problem, ctx["learned"], None, cfg.depth).x_final
    if name == "genie":
        return genie_mmse(inst).x_hat
    raise ValidationError(f"unknown estimator {name!r}")


def _trial(idx, inst, estimators, ctx, cfg, rate):
    problem = prepare_examples([inst])[0][0]
    out = []
    for name in estimators:
        t0 = time.perf_counter()
        try:
            x_hat = _estimate(name, inst, problem, ctx, cfg)
            snr = snr_db(inst.x_true, x_hat)
            failed = not math.isfinite(snr)
        except NumericalError as err:
            logger.warning("%s failed on trial %d at M/N=%g: %s", name, idx, rate, err)
            snr, failed = math.nan, True
        wall = time.perf_counter() - t0 if cfg.record_timing else 0.0
        out.append(TrialRecord(name, rate, idx, snr, wall, failed))
    return out


def run_sweep(rates, per_rate_trials, estimators=ESTIMATORS, cfg=BenchConfig(), models=None):
    """Score ``estimators`` on ``per_rate_trials`` fresh instances per rate.

    ``models`` optionally maps a rate to a pre-trained nonlinearity, which
    skips learning for that rate.
    """
    rates = [float(r) for r in rates]
    if not rates or any(not 0.0 < r <= 1.0 for r in rates):
        raise ValidationError(f"rates must lie in (0, 1], got {rates}")
    if per_rate_trials < 1:
        raise ValidationError("need at least one trial per rate")
    wanted = []
    for name in estimators:
        if name in UNAVAILABLE:
            logger.warning("skipping %s: %s", name, UNAVAILABLE[name])
        elif name not in ESTIMATORS:
            raise ValidationError(f"unknown estimator {name!r}")
        else:
            wanted.append(name)
    models = dict(models or {})
    prior = SignalPrior(cfg.n, cfg.rho)
    result = SweepResult([], [])

    for ri, rate in enumerate(rates):
        m = max(1, int(round(rate * cfg.n)))
        train_set = make_dataset(prior, m, cfg.snr_db, cfg.n_train, cfg.seed,
                                 TRAIN + 2 * ri, cfg.fixed_h)
        test_set = make_dataset(prior, m, cfg.snr_db, per_rate_trials, cfg.seed,
                                TEST + 2 * ri, cfg.fixed_h)
        if {i.digest() for i in train_set} & {i.digest() for i in test_set}:
            raise NumericalError("training and test splits overlap")
        examples = prepare_examples(train_set)
        ctx = {}
        if "lasso" in wanted:
            ctx["lasso_lambda"] = tune_lasso_lambda(
                examples, cfg.lambda_candidates,
                solver=lambda p, lam: fista_lasso(p, lam, cfg.fista_max_iter, cfg.fista_tol).x_hat,
            )
            result.lasso_lambdas[rate] = ctx["lasso_lambda"]
        if "learned" in wanted or "ista" in wanted:
            ctx["depth_lambda"] = tune_depth_lambda(examples, cfg.lambda_candidates, cfg.depth)
            result.depth_lambdas[rate] = ctx["depth_lambda"]
        if "learned" in wanted:
            if rate in models:
                ctx["learned"] = models[rate]
            else:
                report = train(examples, cfg.train_config(ctx["depth_lambda"]))
                result.reports[rate] = report
                ctx["learned"] = report.learned
        logger.info("M/N=%g: context ready, lambdas %s", rate,
                    {k: v for k, v in ctx.items() if k.endswith("lambda")})

        jobs = list(enumerate(test_set))
        def run(job):
            return _trial(job[0], job[1], wanted, ctx, cfg, rate)
        if cfg.threads > 1:
            with ThreadPoolExecutor(cfg.threads) as pool:
                rows = list(pool.map(run, jobs))
        else:
            rows = [run(job) for job in jobs]
        batch = [r for row in rows for r in row]
        n_failed = sum(r.failed for r in batch)
        if n_failed > MAX_FAILURE_FRACTION * len(batch):
            raise NumericalError(
                f"{n_failed} of {len(batch)} trials failed at M/N={rate}; aborting sweep"
            )
        result.records.extend(batch)

    result.summary = summarize(result.records)
    return result


def summarize(records):
    """Per estimator and rate: mean SNR, standard error, successful trial count."""
    groups = {}
    for r in records:
        groups.setdefault((r.estimator, r.m_over_n), []).append(r)
    rows = []
    for (name, rate), recs in groups.items():
        vals = np.array([r.snr_db for r in recs if not r.failed])
        n = vals.size
        mean = float(vals.mean()) if n else math.nan
        se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        rows.append(SummaryRow(name, rate, mean, se, n))
    return rows


def write_results_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in records:
            w.writerow([r.estimator, repr(r.m_over_n), r.trial_index, repr(float(r.snr_db)),
                        repr(1000.0 * r.wall_time)])


def write_summary_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in rows:
            w.writerow([s.estimator, repr(s.m_over_n), repr(s.mean_snr_db), repr(s.stderr_db),
                        s.n_trials])


def shape_table(nl, threshold=None, points=2001):
    """``(z, phi(z), soft(z))`` on a uniform grid spanning the spline's knots."""
    if threshold is None:
        threshold = nl.init_threshold or 0.0
    R = nl.grid_halfwidth * nl.delta
    z = np.linspace(-R, R, points)
    return z, nl(z), soft_threshold(z, threshold)


def export_shape_csv(nl, path, threshold=None, points=2001):
    z, phi, soft = shape_table(nl, threshold, points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("z", "phi", "softthresh"))
        for row in zip(z, phi, soft):
            w.writerow([repr(float(v)) for v in row])


def with_overrides(cfg, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
