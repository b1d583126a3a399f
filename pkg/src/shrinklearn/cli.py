"""Command-line entry point.

Subcommands: ``datagen``, ``train``, ``eval``, ``bench``, ``gradcheck`` and
``replay``. Every command except ``replay`` writes a JSON run manifest next to
its main output; ``shrinklearn replay MANIFEST`` re-runs it with the recorded
arguments and seed.

Parameter precedence, highest first: ``SHRINKLEARN_SEED`` (seed only),
explicit flags, values from ``--config FILE`` (a JSON object keyed by option
name, e.g. ``{"depth": 50}``), built-in defaults.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .backprop import finite_difference_gradient, gradient, max_relative_error
from .baselines import fista_lasso, genie_mmse
from .bench import (
    DEFAULT_RATES,
    ESTIMATORS,
    UNAVAILABLE,
    BenchConfig,
    TrialRecord,
    export_shape_csv,
    run_sweep,
    summarize,
    write_results_csv,
    write_summary_csv,
)
from .datagen import TEST, TRAIN, SignalPrior, make_dataset, read_dataset, write_dataset
from .errors import NumericalError, ValidationError
from .ista import ista_forward, soft_threshold_ista
from .metrics import snr_db
from .spline import load_model, parse_constraint, save_model
from .trainer import (
    DEFAULT_LAMBDAS,
    Calibrated,
    FixedRange,
    TrainConfig,
    initial_nonlinearity,
    prepare_examples,
    train,
    tune_depth_lambda,
)

logger = logging.getLogger("shrinklearn")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
SEED_ENV = "SHRINKLEARN_SEED"
GRADCHECK_TOL = 1e-6


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _names(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _manifest_path(args, primary):
    return Path(args.manifest) if args.manifest else Path(str(primary) + ".manifest.json")


def _write_manifest(args, outputs, started, primary):
    doc = {
        "tool": "shrinklearn",
        "code_version": __version__,
        "command": args.command,
        "argv": args.argv,
        "seed": args.seed,
        "config": {k: v for k, v in sorted(vars(args).items())
                   if k not in ("func", "argv") and _jsonable(v)},
        "outputs": [str(p) for p in outputs],
        "started": started,
        "finished": _now(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    path = _manifest_path(args, primary)
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def _jsonable(v):
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


# -- datagen -------------------------------------------------------------------

def cmd_datagen(args):
    if args.count < 1:
        raise ValidationError(f"--count must be >= 1, got {args.count}")
    m = args.m if args.m is not None else int(round(args.rate * args.n))
    if not 1 <= m:
        raise ValidationError(f"number of measurements must be >= 1, got {m}")
    domain = TRAIN if args.split == "train" else TEST
    ds = make_dataset(SignalPrior(args.n, args.rho), m, args.snr_db, args.count,
                      args.seed, domain, args.fixed_h)
    write_dataset(ds, args.out)
    print(f"wrote {len(ds)} instances (N={ds.n}, M={ds.m}, seed={args.seed}) to {args.out}")
    return [args.out], args.out


# -- train ---------------------------------------------------------------------

def _train_config(args, constraint):
    if args.range_lo is not None or args.range_hi is not None:
        if args.range_lo is None or args.range_hi is None:
            raise ValidationError("--range-lo and --range-hi must be given together")
        grid_range = FixedRange(args.range_lo, args.range_hi)
    else:
        grid_range = Calibrated(args.safety)
    return TrainConfig(
        depth=args.depth,
        learning_rate=args.mu,
        batch_size=args.batch_size,
        iterations=args.iterations,
        constraint=constraint,
        grid_K=args.grid_k,
        grid_range=grid_range,
        init_lambda=args.lam,
        lambda_candidates=args.lambda_grid,
        probe_size=args.probe_size,
        probe_every=args.probe_every,
        seed=args.seed,
        threads=args.threads,
    )


def cmd_train(args):
    cfg = _train_config(args, parse_constraint(args.constraint))
    ds = read_dataset(args.data)
    examples = prepare_examples(ds)
    if cfg.init_lambda is None:
        lam = tune_depth_lambda(examples, cfg.lambda_candidates, cfg.depth)
        logger.info("tuned initial lambda %g", lam)
        cfg = replace(cfg, init_lambda=lam)
    report = train(examples, cfg)
    save_model(report.learned, args.model_out)
    curve = args.curve_out or str(args.model_out) + ".curve.csv"
    with open(curve, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iteration", "train_snr_db"))
        for i, v in enumerate(report.snr_per_iteration, start=1):
            w.writerow((i, repr(float(v))))
    outputs = [args.model_out, curve]
    if args.probe_out:
        with open(args.probe_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("iteration", "probe_snr_db"))
            for i, v in zip(report.probe_iterations, report.probe_snr):
                w.writerow((int(i), repr(float(v))))
        outputs.append(args.probe_out)
    print(f"lambda={report.lam:g} probe SNR {report.probe_snr[0]:.2f} -> "
          f"{report.probe_snr[-1]:.2f} dB; final train MSE {report.final_train_mse:.4g}")
    return outputs, args.model_out


# -- eval ----------------------------------------------------------------------

def cmd_eval(args):
    ds = read_dataset(args.data)
    estimators = args.estimators
    nl = load_model(args.model) if args.model else None
    if "learned" in estimators and nl is None:
        raise ValidationError("--model is required to evaluate the learned estimator")
    if ({"lasso", "ista"} & set(estimators)) and args.lam is None:
        raise ValidationError("--lam is required for the lasso and ista estimators")
    rate = ds.m / ds.n
    records = []
    for idx, inst in enumerate(ds):
        p = prepare_examples([inst])[0][0]
        for name in estimators:
            try:
                if name == "learned":
                    x_hat = ista_forward(p, nl, None, args.depth).x_final
                elif name == "lasso":
                    x_hat = fista_lasso(p, args.lam, args.max_iter, args.tol).x_hat
                elif name == "ista":
                    x_hat = soft_threshold_ista(p, args.lam, T=args.depth, tol=0.0)
                elif name == "genie":
                    x_hat = genie_mmse(inst).x_hat
                else:
                    raise ValidationError(f"unknown estimator {name!r}")
                snr = snr_db(inst.x_true, x_hat)
            except NumericalError as err:
                logger.warning("%s failed on instance %d: %s", name, idx, err)
                snr = math.nan
            failed = not math.isfinite(snr)
            if snr == math.inf:
                print(f"{name} instance {idx}: exact recovery, SNR not comparable "
                      "(failure-to-compare)", file=sys.stderr)
            records.append(TrialRecord(name, rate, idx, snr, 0.0, failed))
    write_results_csv(records, args.out)
    for row in summarize(records):
        print(f"{row.estimator:8s} M/N={row.m_over_n:.3f} mean SNR {row.mean_snr_db:.3f} dB "
              f"(n={row.n_trials})")
    return [args.out], args.out


# -- bench ---------------------------------------------------------------------

def cmd_bench(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.estimators:
        if name in UNAVAILABLE:
            print(f"note: {name} skipped ({UNAVAILABLE[name]})", file=sys.stderr)
    cfg = BenchConfig(
        n=args.n, rho=args.rho, snr_db=args.snr_db, n_train=args.n_train, depth=args.depth,
        grid_K=args.grid_k, iterations=args.iterations, learning_rate=args.mu,
        batch_size=args.batch_size, safety_factor=args.safety,
        lambda_candidates=args.lambda_grid, fista_max_iter=args.max_iter, fista_tol=args.tol,
        probe_size=args.probe_size, probe_every=args.probe_every, fixed_h=args.fixed_h,
        seed=args.seed, threads=args.threads, record_timing=args.timing,
    )
    result = run_sweep(args.rates, args.trials, args.estimators, cfg)
    outputs = [out / "results.csv", out / "summary.csv"]
    write_results_csv(result.records, outputs[0])
    write_summary_csv(result.summary, outputs[1])
    for rate, rep in result.reports.items():
        tag = f"{rate:g}"
        save_model(rep.learned, out / f"model_{tag}.json")
        export_shape_csv(rep.learned, out / f"shape_{tag}.csv")
        with open(out / f"curve_{tag}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("iteration", "probe_snr_db"))
            for i, v in zip(rep.probe_iterations, rep.probe_snr):
                w.writerow((int(i), repr(float(v))))
        outputs += [out / f"model_{tag}.json", out / f"shape_{tag}.csv", out / f"curve_{tag}.csv"]
    for row in result.summary:
        print(f"{row.estimator:8s} M/N={row.m_over_n:.2f} {row.mean_snr_db:7.3f} dB "
              f"+/- {row.stderr_db:.3f} (n={row.n_trials})")
    return outputs, out / "results.csv"


# -- gradcheck -----------------------------------------------------------------

def gradcheck_case(seed, n=16, m=8, depth=10, grid_k=20, rho=0.2, snr=30.0, safety=1.5,
                   lam=0.1, index=0):
    """A seeded small instance with a perturbed soft-threshold nonlinearity.

    Returns ``(problem, x_true, nonlinearity)``. The grid comes from the
    calibration rule; coefficients are perturbed at the scale of the grid
    spacing so the spline is not a pure soft threshold.
    """
    ds = make_dataset(SignalPrior(n, rho), m, snr, 1, seed, TRAIN, start=index)
    examples = prepare_examples(ds)
    cfg = TrainConfig(depth=depth, grid_K=grid_k, grid_range=Calibrated(safety), init_lambda=lam)
    nl = initial_nonlinearity(examples, cfg, lam)
    rng = np.random.default_rng([seed, index, 7])
    nl = nl.with_coefficients(nl.coefficients + 0.1 * nl.delta * rng.standard_normal(2 * grid_k + 1))
    p, x = examples[0]
    return p, x, nl


def run_gradcheck(seed, instances=1, n=16, m=8, depth=10, grid_k=20, step=None):
    errs = []
    for i in range(instances):
        p, x, nl = gradcheck_case(seed, n, m, depth, grid_k, index=i)
        g = gradient(p, nl, ista_forward(p, nl, None, depth), x)
        fd = finite_difference_gradient(p, nl, x, depth, step)
        errs.append(max_relative_error(g, fd))
    return errs


def cmd_gradcheck(args):
    errs = run_gradcheck(args.seed, args.instances, args.n, args.m, args.depth, args.grid_k,
                         args.step)
    worst = max(errs)
    verdict = "PASS" if worst <= args.tol else "FAIL"
    print(f"max_rel_err={worst:.3e} over {len(errs)} instance(s), tol={args.tol:g}: {verdict}")
    Path(args.out).write_text(json.dumps(
        {"max_rel_err": worst, "per_instance": errs, "tol": args.tol, "pass": verdict == "PASS"},
        indent=1) + "\n")
    if verdict == "FAIL":
        raise NumericalError(f"gradient check failed: max relative error {worst:.3e}")
    return [args.out], args.out


# -- parser --------------------------------------------------------------------

def _common(p, seed=True):
    p.add_argument("--config", help="JSON file with option defaults")
    p.add_argument("--manifest", help="manifest path (default: <output>.manifest.json)")
    p.add_argument("--threads", type=int, default=1)
    if seed:
        p.add_argument("--seed", type=int, default=0)


def _training_options(p):
    p.add_argument("--depth", type=int, default=200, help="ISTA layers T")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--mu", type=float, default=1e-4, help="learning rate")
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--grid-k", type=int, default=4000, help="grid half-width K (2K+1 splines)")
    p.add_argument("--safety", type=float, default=1.5, help="calibrated range safety factor")
    p.add_argument("--lambda-grid", type=_floats, default=DEFAULT_LAMBDAS)
    p.add_argument("--probe-size", type=int, default=8)
    p.add_argument("--probe-every", type=int, default=1)


def build_parser():
    parser = argparse.ArgumentParser(prog="shrinklearn", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--rate", type=float, default=0.7, help="M/N when --m is not given")
    p.add_argument("--rho", type=float, default=0.2)
    p.add_argument("--snr-db", type=float, default=30.0)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--fixed-h", action="store_true", help="share one sensing matrix")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="learn a nonlinearity on a dataset")
    _common(p)
    _training_options(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--curve-out")
    p.add_argument("--probe-out")
    p.add_argument("--lam", type=float, default=None, help="initial soft-threshold lambda")
    p.add_argument("--range-lo", type=float)
    p.add_argument("--range-hi", type=float)
    p.add_argument("--constraint", default="none", help="none | odd | box:LO:HI")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score estimators on a dataset")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model")
    p.add_argument("--depth", type=int, default=200)
    p.add_argument("--estimators", type=_names, default=("learned",))
    p.add_argument("--lam", type=float)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="Monte Carlo sweep over measurement rates")
    _common(p)
    _training_options(p)
    p.add_argument("--rates", type=_floats, default=DEFAULT_RATES)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--rho", type=float, default=0.2)
    p.add_argument("--snr-db", type=float, default=30.0)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--estimators", type=_names, default=ESTIMATORS)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--fixed-h", action="store_true")
    p.add_argument("--timing", action="store_true", help="record wall times (not reproducible)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="compare backprop against finite differences")
    _common(p)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--grid-k", type=int, default=20)
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--step", type=float, default=None,
                   help="finite-difference step (default 3e-4 times the grid spacing)")
    p.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    p.add_argument("--out", default="gradcheck.json")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest_file")
    p.set_defaults(func=None)
    return parser, sub


def parse_args(argv, use_env=True):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            defaults = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ValidationError(f"cannot read config {args.config}: {err}")
        known = {a.dest for a in sub.choices[args.command]._actions}
        unknown = set(defaults) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        sub.choices[args.command].set_defaults(**defaults)
        args = parser.parse_args(argv)
    if use_env and hasattr(args, "seed") and os.environ.get(SEED_ENV):
        try:
            args.seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ValidationError(f"{SEED_ENV} must be an integer")
    args.argv = list(argv)
    return args


def _replay(path):
    doc = json.loads(Path(path).read_text())
    argv = list(doc["argv"])
    # pin the recorded seed; the environment must not change a replay
    args = parse_args(argv + ["--seed", str(doc["seed"])], use_env=False)
    args.argv = argv
    return args


def run(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "replay":
            args = _replay(args.manifest_file)
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        started = _now()
        outputs, primary = args.func(args)
        if primary is not None:
            _write_manifest(args, outputs, started, primary)
        return EXIT_OK
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
