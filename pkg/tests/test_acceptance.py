"""Acceptance suite: published-error bands on real MNIST plus property checks.

The quantitative tier loads the hyperparameters chosen on validation data
by ``scripts/tune_acceptance.py`` from ``configs/acceptance/`` and runs
seeds 0, 1, 2 on the test split. Every criterion prints one
``PASS/FAIL/SKIP criterion <id>: ...`` line; the lines are repeated in the
pytest terminal summary.

The n=16384 runs are the extended tier. They only run when
``PHOTONIC_RC_EXTENDED=1`` is set and the memory guard accepts them.
"""

from __future__ import annotations

import json
import os
import statistics
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from acceptance_log import record
from conftest import synthetic_digits
from reference import compare_modes
from photonic_rc.features import FeatureSpec
from photonic_rc.harness.config import ExperimentConfig
from photonic_rc.harness.pipeline import (ResourceGuardError, check_memory, dataset_for,
                                          run_experiment)
from photonic_rc.harness.report import argmin_set, render_json
from photonic_rc.numerics import make_reservoir_matrix
from photonic_rc.readout import one_hot, ridge_fit
from photonic_rc.reservoir import ReservoirConfig, nonlinearity, step

ROOT = Path(__file__).resolve().parents[1]
ACCEPT = ROOT / "configs" / "acceptance"
RESULTS = ROOT / "results" / "acceptance"
SEEDS = (0, 1, 2)
FEATURE_METHODS = ("raw", "zoning2", "zoning4", "gabor", "hog")
EXTENDED = os.environ.get("PHOTONIC_RC_EXTENDED") == "1"

_reports: dict[str, object] = {}


def pct(x: float) -> str:
    # three decimals: a mean can sit a few thousandths of a point past a band edge
    return f"{100 * x:.3f}%"


def accepted_config(name: str, **overrides) -> ExperimentConfig:
    path = ACCEPT / f"{name}.yaml"
    if not path.exists():
        pytest.fail(f"{path} missing; run `python scripts/tune_acceptance.py {name}` first")
    cfg = ExperimentConfig.from_file(path)
    return cfg.with_overrides({"seeds": list(SEEDS), **overrides})


def run_named(name: str, ds, **overrides):
    """Run (once per session) the tuned config ``name`` on the test split."""
    cfg = accepted_config(name, **overrides)
    key = json.dumps(cfg.to_dict(), sort_keys=True)
    if key not in _reports:
        report = run_experiment(cfg, ds)
        RESULTS.mkdir(parents=True, exist_ok=True)
        tag = name + "".join(f"_{k}{v}" for k, v in sorted(overrides.items()))
        (RESULTS / f"{tag}.json").write_text(render_json([report], include_timing=True))
        _reports[key] = report
    return _reports[key]


def band(criterion: str, what: str, report, lo: float, hi: float) -> bool:
    m = report.mean_error
    ok = lo <= m <= hi
    seeds = ", ".join(pct(e) for e in report.test_errors)
    record(criterion, ok, f"{what}: mean {pct(m)} (seeds {seeds}) vs band [{pct(lo)}, {pct(hi)}]")
    return ok


@pytest.fixture(scope="module")
def mnist(mnist_dir):
    return dataset_for(ExperimentConfig(data_dir=str(mnist_dir)))


# ---------------------------------------------------------------------------
# Quantitative tier (n = 1024)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("criterion,name,lo,hi", [
    ("1", "ff_raw", 0.057, 0.071),
    ("3", "ff_zoning2", 0.044, 0.056),
    ("4", "ff_gabor", 0.022, 0.032),
    ("5a", "ff_hog", 0.013, 0.020),
])
def test_feedforward_bands(mnist, criterion, name, lo, hi):
    assert band(criterion, f"{name} n=1024", run_named(name, mnist), lo, hi)


def test_recurrent_hog_transients(mnist):
    """Criterion 6: band at k_e=2, and k_e=2 among the best of k_e = 0..4."""
    reports = [run_named("rec_hog", mnist, k_e=k) for k in range(5)]
    means = [r.mean_error for r in reports]
    # seed-to-seed spread pooled across the sweep; differences below it are not resolvable
    pooled = statistics.fmean(statistics.variance(r.test_errors) for r in reports) ** 0.5
    tol = max(pooled, 0.0005)
    best = argmin_set(means, tol)
    in_band = 0.011 <= means[2] <= 0.017
    curve = ", ".join(f"k_e={k}: {pct(m)}" for k, m in enumerate(means))
    ok = in_band and 2 in best
    record("6", ok, f"rec_hog {curve}; argmin set (tol {pct(tol)}) = {best}; "
                    f"k_e=2 band [1.10%, 1.70%] {'met' if in_band else 'missed'}")
    assert ok


@pytest.mark.parametrize("feat", FEATURE_METHODS)
def test_recurrent_gain(mnist, feat):
    """Criterion 7: recurrent k_e=2 is no worse than feedforward on the same seeds."""
    ff = run_named(f"ff_{feat}", mnist)
    rec = run_named(f"rec_{feat}", mnist, k_e=2)
    assert ff.seeds == rec.seeds
    gain = 1 - rec.mean_error / ff.mean_error
    ok = rec.mean_error <= ff.mean_error
    wins = sum(r <= f for r, f in zip(rec.test_errors, ff.test_errors))
    record(f"7/{feat}", ok, f"recurrent {pct(rec.mean_error)} vs feedforward {pct(ff.mean_error)} "
                            f"(relative gain {100 * gain:.1f}%, {wins}/{len(ff.seeds)} seeds no worse)")
    assert ok


@pytest.mark.parametrize("criterion,name,lo,hi", [
    ("8a", "col_agg4", 0.037, 0.054),
    ("8b", "col_single17", 0.10, 0.14),
    ("8c", "col_percol", 0.17, 0.26),
])
def test_columnwise_bands(mnist, criterion, name, lo, hi):
    assert band(criterion, f"{name} n=1024", run_named(name, mnist), lo, hi)


# ---------------------------------------------------------------------------
# Extended tier (n = 16384)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("criterion,name,lo,hi", [
    ("2", "ff_raw", 0.017, 0.026),
    ("5b", "ff_hog", 0.006, 0.011),
])
def test_extended_bands(mnist, criterion, name, lo, hi):
    # a narrower harvesting block keeps the state buffers well below the normal matrix
    overrides = {"n": 16384, "block_size": 256}
    if not EXTENDED:
        record(criterion, None, f"{name} n=16384 is extended tier; set PHOTONIC_RC_EXTENDED=1")
        pytest.skip("extended tier disabled")
    cfg = accepted_config(name, **overrides)
    try:
        check_memory(cfg, n_train=len(mnist.train), n_val=len(mnist.validation),
                     n_test=len(mnist.test))
    except ResourceGuardError as exc:
        record(criterion, None, f"{name} n=16384 rejected by the memory guard: {exc}")
        pytest.skip(str(exc))
    assert band(criterion, f"{name} n=16384", run_named(name, mnist, **overrides), lo, hi)


# ---------------------------------------------------------------------------
# Property tier
# ---------------------------------------------------------------------------

DIMENSIONS = [
    (FeatureSpec("raw"), 784),
    (FeatureSpec("zoning", {"zone": 2}), 196),
    (FeatureSpec("zoning", {"zone": 4}), 49),
    (FeatureSpec("gabor", {"wavelengths": [3, 4, 5, 6, 7], "local_grid": None,
                          "block_norm": False}), 40),
    (FeatureSpec("gabor", {"block_norm": False}), 392),
    (FeatureSpec("gabor"), 1152),
    (FeatureSpec("hog", {"cell_size": 7}), 324),
    (FeatureSpec("hog", {"cell_size": 4}), 1296),
    (FeatureSpec("projection"), 56),
    (FeatureSpec("distance"), 112),
]


def test_feature_dimensions():
    """Criterion 9."""
    images, _ = synthetic_digits(12, seed=5)
    got = []
    for spec, dim in DIMENSIONS:
        out = spec.extract(images)
        got.append((spec.method, dim, out.shape == (12, dim) and spec.dimension() == dim))
    ok = all(g[2] for g in got)
    record("9", ok, "feature dimensions " + " / ".join(str(d) for _, d, _ in got)
           + ("" if ok else f"; mismatches {[g for g in got if not g[2]]}"))
    assert ok


def test_ridge_oracle():
    """Criterion 10: 50 random instances against an explicit normal-equation inverse."""
    worst_w = worst_r = 0.0
    for trial in range(50):
        rng = np.random.default_rng(1000 + trial)
        d, k = int(rng.integers(2, 40)), int(rng.integers(50, 200))
        X = rng.standard_normal((d, k))
        Y = one_hot(rng.integers(0, 10, k))
        lam = float(10.0 ** rng.uniform(-6, 1))
        W = ridge_fit(X, Y, lam)
        W_ref = Y @ X.T @ np.linalg.inv(X @ X.T + lam * np.eye(d))
        worst_w = max(worst_w, np.linalg.norm(W - W_ref) / np.linalg.norm(W_ref))
        resid = Y @ X.T - W @ (X @ X.T + lam * np.eye(d))
        worst_r = max(worst_r, np.linalg.norm(resid) / np.linalg.norm(Y @ X.T))
    ok = worst_w <= 1e-8 and worst_r <= 1e-8
    record("10", ok, f"50 instances, worst relative deviation {worst_w:.1e}, "
                     f"worst residual {worst_r:.1e} (limit 1e-8)")
    assert ok


def test_reservoir_reference():
    """Criterion 11: every mode bit-for-bit against the scalar simulation, n <= 8."""
    mismatches = []
    for trial in range(100):
        result = compare_modes(np.random.default_rng(5000 + trial))
        mismatches += [(trial, mode) for mode, same in result.items() if not same]
    ok = not mismatches
    record("11", ok, f"100 random configs, all modes, {len(mismatches)} mismatches")
    assert ok, mismatches[:5]


def test_quantization_closure():
    """Criterion 12."""
    rng = np.random.default_rng(12)
    grid_ok = True
    for trial in range(20):
        n, p = int(rng.integers(4, 64)), int(rng.integers(1, 30))
        res = ReservoirConfig.build(n, p, input_gain=float(rng.uniform(0.01, 2)),
                                    rho=float(rng.uniform(0, 2)), density=0.3, seed=trial)
        x = np.zeros(n)
        for _ in range(5):
            x = step(res, x, rng.random(p))
            codes = x * 1023
            grid_ok &= bool(np.all((x >= 0) & (x <= 1)) and np.array_equal(codes, np.rint(codes)))
    peak = float(nonlinearity(0.5))
    ends = float(nonlinearity(0.0)) == 0.0 and float(nonlinearity(1.0)) == 0.0
    ok = grid_ok and ends and abs(peak - 1.0) <= 1 / 1023
    record("12", ok, f"states on 10-bit grid: {grid_ok}; f(0)=f(1)=0: {ends}; f(0.5)={peak:.6f}")
    assert ok


def test_spectral_radius_contract():
    """Criterion 13."""
    devs = []
    for trial in range(20):
        rng = np.random.default_rng(trial)
        n = int(rng.integers(64, 400))
        rho = float(rng.uniform(0.2, 1.5))
        W = make_reservoir_matrix(n, float(rng.uniform(0.03, 0.3)), rho, seed=trial)
        dense = W.toarray() if sp.issparse(W) else np.asarray(W)
        devs.append(abs(np.max(np.abs(np.linalg.eigvals(dense))) - rho))
    ok = max(devs) <= 1e-3
    record("13", ok, f"20 instances, worst |radius - target| = {max(devs):.1e} (limit 1e-3)")
    assert ok


def test_determinism(fake_mnist):
    """Criterion 14: two runs of one config give byte-identical JSON reports."""
    texts = []
    for mode, extra in [("feedforward", {}), ("recurrent_full", {"k_e": 2}),
                        ("columnwise_aggregate", {"aggregate": [14, 20]}),
                        ("columnwise_per_column", {})]:
        cfg = ExperimentConfig(mode=mode, n=48, density=0.2, input_gain=0.3, rho=0.6,
                               seeds=(0, 1), validation_size=100, data_dir=str(fake_mnist),
                               **extra)
        a = render_json([run_experiment(cfg)]).encode()
        b = render_json([run_experiment(cfg)]).encode()
        texts.append((mode, a == b))
    ok = all(same for _, same in texts)
    record("14", ok, "byte-identical reports: " + ", ".join(f"{m} {s}" for m, s in texts))
    assert ok
