import csv
import math

import numpy as np
import pytest

from shrinklearn.bench import (
    RESULT_COLUMNS,
    SUMMARY_COLUMNS,
    BenchConfig,
    TrialRecord,
    export_shape_csv,
    run_sweep,
    snr_db,
    summarize,
    write_results_csv,
    write_summary_csv,
)
from shrinklearn.errors import NumericalError, ValidationError
from shrinklearn.metrics import mean_snr_db
from shrinklearn.spline import fit_soft_threshold

TINY = BenchConfig(n=24, snr_db=30.0, n_train=10, depth=20, grid_K=40, iterations=4,
                   learning_rate=1e-3, batch_size=2, probe_size=3, seed=5,
                   lambda_candidates=(0.01, 0.05, 0.1))


def test_snr_examples():
    x = np.array([3.0, -4.0, 0.0])
    assert snr_db(x, np.zeros(3)) == 0.0
    assert snr_db(x, x / 2) == pytest.approx(10 * math.log10(4), abs=1e-12)
    assert snr_db(x, x) == math.inf
    with pytest.raises(ValidationError):
        snr_db(np.zeros(3), x)
    with pytest.raises(ValidationError):
        snr_db(x, x[:2])


def test_snr_matches_naive_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, xh = rng.standard_normal(50), rng.standard_normal(50)
        num = sum(v * v for v in x)
        den = sum((a - b) ** 2 for a, b in zip(x, xh))
        assert snr_db(x, xh) == pytest.approx(10 * math.log10(num / den), abs=1e-12)


def test_snr_non_finite_estimates():
    x = np.ones(3)
    assert snr_db(x, np.array([1e200, 0.0, 0.0])) == -math.inf
    with pytest.raises(NumericalError):
        snr_db(x, np.array([np.nan, 0.0, 0.0]))


def test_mean_of_duplicated_trials():
    x, xh = np.array([1.0, 2.0]), np.array([0.5, 2.5])
    assert mean_snr_db([x] * 5, [xh] * 5) == pytest.approx(snr_db(x, xh), abs=1e-12)
    recs = [TrialRecord("lasso", 0.5, i, 12.5) for i in range(4)]
    row = summarize(recs)[0]
    assert row.mean_snr_db == 12.5 and row.stderr_db == 0.0 and row.n_trials == 4


def test_summary_excludes_failures():
    recs = [TrialRecord("a", 0.5, 0, 10.0), TrialRecord("a", 0.5, 1, 14.0),
            TrialRecord("a", 0.5, 2, math.nan, failed=True)]
    row = summarize(recs)[0]
    assert row.mean_snr_db == 12.0 and row.n_trials == 2
    assert row.stderr_db == pytest.approx(np.std([10.0, 14.0], ddof=1) / math.sqrt(2))


@pytest.fixture(scope="module")
def sweep():
    return run_sweep([0.5, 0.75], 3, cfg=TINY)


def test_sweep_rows_and_order(sweep):
    assert len(sweep.records) == 2 * 3 * 4
    keys = [(r.m_over_n, r.trial_index) for r in sweep.records]
    assert keys == sorted(keys)
    assert {s.estimator for s in sweep.summary} == {"lasso", "ista", "learned", "genie"}
    assert set(sweep.reports) == {0.5, 0.75}
    assert all(r.wall_time == 0.0 for r in sweep.records)


def test_sweep_is_deterministic(sweep, tmp_path):
    again = run_sweep([0.5, 0.75], 3, cfg=TINY)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_results_csv(sweep.records, a)
    write_results_csv(again.records, b)
    assert a.read_bytes() == b.read_bytes()


def test_threaded_sweep_matches(sweep):
    from dataclasses import replace
    threaded = run_sweep([0.5, 0.75], 3, cfg=replace(TINY, threads=3))
    assert [r.snr_db for r in threaded.records] == [r.snr_db for r in sweep.records]


def test_pretrained_model_skips_training():
    nl = fit_soft_threshold(40, 0.05, 0.01)
    res = run_sweep([0.5], 2, ("learned",), TINY, models={0.5: nl})
    assert not res.reports and len(res.records) == 2


def test_full_rate_sanity_floor():
    cfg = BenchConfig(n=32, snr_db=40.0, n_train=20, depth=100, grid_K=100, iterations=10,
                      learning_rate=1e-3, batch_size=2, probe_size=4, seed=3)
    res = run_sweep([1.0], 10, cfg=cfg)
    for row in res.summary:
        assert row.mean_snr_db >= 20.0, row


def test_unavailable_and_unknown_estimators(caplog):
    res = run_sweep([0.5], 1, ("gamp", "genie"), TINY)
    assert {r.estimator for r in res.records} == {"genie"}
    assert "GAMP" in caplog.text
    with pytest.raises(ValidationError):
        run_sweep([0.5], 1, ("nope",), TINY)
    with pytest.raises(ValidationError):
        run_sweep([0.0], 1, ("genie",), TINY)
    with pytest.raises(ValidationError):
        run_sweep([0.5], 0, ("genie",), TINY)


def test_csv_columns(sweep, tmp_path):
    rp, sp = tmp_path / "r.csv", tmp_path / "s.csv"
    write_results_csv(sweep.records, rp)
    write_summary_csv(sweep.summary, sp)
    rows = list(csv.reader(rp.open()))
    assert tuple(rows[0]) == RESULT_COLUMNS and len(rows) == 1 + len(sweep.records)
    srows = list(csv.reader(sp.open()))
    assert tuple(srows[0]) == SUMMARY_COLUMNS
    # values survive a text round trip exactly
    assert float(rows[1][3]) == sweep.records[0].snr_db


def test_shape_export(tmp_path):
    nl = fit_soft_threshold(50, 0.1, 0.5)
    path = tmp_path / "shape.csv"
    export_shape_csv(nl, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["z", "phi", "softthresh"] and len(rows) == 2002
    z = np.array([float(r[0]) for r in rows[1:]])
    assert z[0] == -5.0 and z[-1] == 5.0
    soft = np.array([float(r[2]) for r in rows[1:]])
    np.testing.assert_allclose(soft, np.sign(z) * np.maximum(np.abs(z) - 0.5, 0))
