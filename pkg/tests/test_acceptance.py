"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Lines are printed as each test runs and repeated in the pytest terminal
summary. Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from imlp.buffer import FeatureBuffer
from imlp.cli import main
from imlp.data import plan_segments
from imlp.metrics import PowerTrace, SegmentResult, integrate_energy, netscore, netscore_t
from imlp.model import ImlpConfig, forward, init_params
from imlp.stats import ResultsMatrix, TradeoffPoint, friedman_test, holm_adjust, nemenyi_cd, pareto_front, wilcoxon_signed_rank
from imlp.synthetic import drifting_gaussian_stream, recurring_concept_stream, uniform_stream
from imlp.trainer import TrainConfig, run_stream

from conftest import full_model_grad_check, plain_mlp, record_criterion, write_json

SEEDS = (7, 42, 101)


def r_squared(x, y, degree):
    coef = np.polyfit(x, y, degree)
    resid = y - np.polyval(coef, x)
    return 1.0 - resid @ resid / np.sum((y - y.mean()) ** 2), coef


def test_criterion_01_gradient_correctness():
    t0 = time.perf_counter()
    worst = full_model_grad_check(seed=0)
    elapsed = time.perf_counter() - t0
    err = max(worst.values())
    ok = err < 1e-4 and elapsed < 10
    record_criterion(1, "gradient correctness", ok, f"max relative error {err:.2e} (< 1e-4) over all coordinates, {elapsed:.2f} s (< 10 s)")
    assert ok, worst


def test_criterion_02_attention_normalization_and_gate():
    worst_sum, gate_mismatch = 0.0, 0
    for trial in range(1000):
        rng = np.random.default_rng(trial)
        cfg = ImlpConfig(
            d_in=int(rng.integers(1, 8)), n_classes=int(rng.integers(2, 5)), d_h=int(rng.integers(1, 12)),
            d_ff=int(rng.integers(1, 16)), window=int(rng.integers(1, 9)),
        )
        params = init_params(cfg, trial)
        x = rng.normal(scale=3.0, size=(int(rng.integers(1, 6)), cfg.d_in))
        buf = cfg.new_buffer()
        for _ in range(int(rng.integers(1, cfg.window + 1))):
            buf.push(rng.normal(scale=3.0, size=cfg.d_h))
        alpha = forward(params, x, buf).alpha[:, :, 0]
        worst_sum = max(worst_sum, float(np.max(np.abs(alpha.sum(axis=1) - 1.0))))

        empty = forward(params, x, cfg.new_buffer())
        h, o, p = plain_mlp(params, x)
        if not (np.array_equal(empty.h, h) and np.array_equal(empty.logits, o) and np.array_equal(empty.probs, p)):
            gate_mismatch += 1
    ok = worst_sum <= 1e-6 and gate_mismatch == 0
    record_criterion(2, "attention normalization and gate", ok, f"max |sum(alpha) - 1| = {worst_sum:.1e} over 1000 forwards; empty-buffer vs MLP on [x||0] bitwise mismatches: {gate_mismatch}")
    assert ok


def test_criterion_03_fifo_window():
    rng = np.random.default_rng(0)
    failures = 0
    for _ in range(60):
        W = int(rng.integers(1, 17))
        n = int(rng.integers(0, 10_001))
        buf = FeatureBuffer(W, 3)
        for i in range(n):
            buf.push(np.array([i, -i, 2 * i], dtype=float))
        expected = [[i, -i, 2 * i] for i in range(max(0, n - W), n)]
        if [e.tolist() for e in buf.entries] != expected:
            failures += 1
        ref = FeatureBuffer(W, 3)
        for i in range(W):
            ref.push(np.zeros(3))
        if n >= W and buf.nbytes() != ref.nbytes():
            failures += 1
    ok = failures == 0
    record_criterion(3, "FIFO/window properties", ok, f"60 random sequences (W in 1..16, up to 1e4 pushes): {failures} failures")
    assert ok


def test_criterion_04_netscore_arithmetic():
    checks = {
        "netscore(1.0, 9) == 1.0": netscore(1.0, 9) == 1.0,
        "netscore(0.5, 999) == 1/6": abs(netscore(0.5, 999) - 1 / 6) <= 1e-12,
    }
    vals = [0.21, 0.37, 0.18, 0.44, 0.29]
    results = [SegmentResult(i, 0.0, 0.0, 1.0, 1.0, v) for i, v in enumerate(vals)]
    checks["netscore_t == mean"] = abs(netscore_t(results) - sum(vals) / len(vals)) <= 1e-12
    grid = [netscore(0.9, e) for e in np.linspace(0.5, 5000, 100)]
    checks["strictly decreasing in E"] = all(b < a for a, b in zip(grid, grid[1:]))
    ok = all(checks.values())
    record_criterion(4, "NetScore arithmetic", ok, ", ".join(f"{k}: {'ok' if v else 'no'}" for k, v in checks.items()))
    assert ok


def test_criterion_05_energy_integration():
    errors = []
    errors.append(abs(integrate_energy(PowerTrace.from_pairs([(0, 100), (10, 100)]), 0, 10) - 1000))
    pl = PowerTrace.from_pairs([(0, 10), (1, 20), (3, 20), (4, 0), (6, 30)])
    errors.append(abs(integrate_energy(pl, 0, 6) - 95.0))  # 15 + 40 + 10 + 30
    errors.append(abs(integrate_energy(pl, 0.5, 5) - 66.25))  # 8.75 + 40 + 10 + 7.5
    rng = np.random.default_rng(1)
    additivity = 0.0
    for _ in range(200):
        ts = np.cumsum(rng.uniform(1e-3, 2.0, size=40))
        tr = PowerTrace(ts, rng.uniform(0, 400, size=40))
        a, b, c = np.sort(rng.uniform(ts[0], ts[-1], size=3))
        if a < b < c:
            additivity = max(additivity, abs(integrate_energy(tr, a, b) + integrate_energy(tr, b, c) - integrate_energy(tr, a, c)))
    ok = max(errors) <= 1e-9 and additivity <= 1e-9
    record_criterion(5, "energy integration", ok, f"closed-form error {max(errors):.1e}, additivity error {additivity:.1e} (<= 1e-9)")
    assert ok


def test_criterion_06_pareto_oracle():
    def oracle(points):
        return [b for b in points if not any(a.dominates(b) for a in points)]

    def key(pts):
        return sorted((p.p, p.E, p.label) for p in pts)

    example = [TradeoffPoint(0.9, 100, "a"), TradeoffPoint(0.8, 50, "b"), TradeoffPoint(0.85, 120, "c")]
    worked = [p.label for p in pareto_front(example)] == ["b", "a"]
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(1, 51))
        pts = [TradeoffPoint(float(rng.integers(0, 10)) / 10, float(rng.integers(0, 10)), str(i)) for i in range(n)]
        mismatches += key(pareto_front(pts)) != key(oracle(pts))
    ok = worked and mismatches == 0
    record_criterion(6, "Pareto oracle equivalence", ok, f"worked example {'ok' if worked else 'wrong'}, {mismatches}/200 random sets differ from O(n^2) oracle")
    assert ok


def test_criterion_07_statistics():
    perfect = ResultsMatrix(["d1", "d2"], ["a", "b", "c"], [[3, 2, 1], [3, 2, 1]])
    fr = friedman_test(perfect)
    tie = friedman_test(ResultsMatrix(["d1", "d2"], ["a", "b", "c"], np.ones((2, 3))))
    checks = {
        "friedman chi2 = 4": fr.chi2 == 4.0,
        "p = e^-2": abs(fr.p_value - math.exp(-2)) <= 1e-6,
        "all-tie chi2 = 0": tie.chi2 == 0.0,
        "wilcoxon p = 0.03125": wilcoxon_signed_rank([1, 2, 3, 4, 5, 6]).p_value == 0.03125,
        "holm (0.02, 0.04)": np.allclose(holm_adjust([0.01, 0.04]), [0.02, 0.04], rtol=0, atol=1e-15),
        "nemenyi CD 0.5523": abs(nemenyi_cd(3, 36, 0.05) - 0.5523) <= 1e-3,
    }
    ok = all(checks.values())
    record_criterion(7, "statistics", ok, ", ".join(f"{k}: {'ok' if v else 'no'}" for k, v in checks.items()))
    assert ok


def test_criterion_08_linear_vs_quadratic_energy_growth():
    # Every FLOPs term scales with the epoch count, so CV, ratios and R^2 do
    # not depend on it; two epochs keep the cumulative run inside the budget.
    t0 = time.perf_counter()
    stream = uniform_stream(n_segments=20, rows_per_segment=600, n_features=10, seed=0)
    cfg = ImlpConfig(d_in=10, n_classes=2)
    tc = TrainConfig(epochs_per_segment=2, seed=0)
    inc = run_stream(stream, "imlp", cfg, tc)
    cum = run_stream(stream, "imlp", cfg, dataclasses.replace(tc, mode="cumulative-retrain"))
    elapsed = time.perf_counter() - t0

    inc_train = np.array([r.train_flops for r in inc], dtype=float)
    cv = inc_train.std() / inc_train.mean()
    cum_train = np.array([r.train_flops for r in cum], dtype=float)
    ratio_err = max(abs(cum_train[t - 1] / (t * cum_train[0]) - 1) for t in range(1, 21))
    T = np.arange(1, 21, dtype=float)
    r2_inc, _ = r_squared(T, np.cumsum([r.energy_j for r in inc]), 1)
    r2_cum, coef = r_squared(T, np.cumsum([r.energy_j for r in cum]), 2)

    checks = {
        f"incremental CV {cv:.3f} < 0.01": cv < 0.01,
        f"cumulative t-ratio error {ratio_err:.1e} <= 0.01": ratio_err <= 0.01,
        f"incremental affine R^2 {r2_inc:.5f} > 0.999": r2_inc > 0.999,
        f"cumulative quadratic a={coef[0]:.3g} > 0, R^2 {r2_cum:.5f}": coef[0] > 0 and r2_cum > 0.999,
        f"runtime {elapsed:.0f} s < 300 s": elapsed < 300,
    }
    ok = all(checks.values())
    record_criterion(8, "linear-vs-quadratic energy growth", ok, "; ".join(f"{k} {'ok' if v else 'FAILS'}" for k, v in checks.items()))
    assert ok


def test_criterion_09_learning_on_drifting_stream():
    t0 = time.perf_counter()
    last3, rising = [], 0
    for seed in SEEDS:
        stream = drifting_gaussian_stream(10, 600, separation=4.5, drift=0.1, noise_features=400, seed=seed)
        results = run_stream(stream, "imlp", ImlpConfig(d_in=410, n_classes=2), TrainConfig(seed=seed))
        ba = np.array([r.balanced_accuracy for r in results])
        last3.append(ba[-3:].mean())
        slope = np.polyfit(np.arange(10), ba, 1)[0]
        rising += slope >= 0
    elapsed = time.perf_counter() - t0
    mean_last3 = float(np.mean(last3))
    ok = mean_last3 >= 0.90 and rising >= 2 and elapsed < 180
    record_criterion(9, "learning on drifting stream", ok, f"last-3 mean BA {mean_last3:.4f} (>= 0.90), nonnegative trend on {rising}/3 seeds (>= 2), {elapsed:.0f} s (< 180 s)")
    assert ok


def test_criterion_10_recurring_concept_benefit():
    means = {"imlp": [], "plain-mlp": []}
    for seed in SEEDS:
        stream = recurring_concept_stream(12, 600, seed=seed)
        cfg = ImlpConfig(d_in=8, n_classes=2, window=8)
        for kind in means:
            results = run_stream(stream, kind, cfg, TrainConfig(seed=seed))
            means[kind].append(np.mean([r.balanced_accuracy for r in results]))
    imlp, plain = float(np.mean(means["imlp"])), float(np.mean(means["plain-mlp"]))
    ok = imlp - plain >= 0
    record_criterion(10, "recurring-concept benefit", ok, f"seed-mean BA IMLP {imlp:.4f} vs plain MLP {plain:.4f}, margin {imlp - plain:+.4f} (>= 0)")
    assert ok


def test_criterion_11_segmentation():
    examples = plan_segments(2000).sizes == [500] * 4 and plan_segments(1234).sizes == [617, 617] and plan_segments(300).sizes == [300]
    rng = np.random.default_rng(11)
    spread = max(max(s) - min(s) for s in (plan_segments(int(n)).sizes for n in rng.integers(1, 100_001, size=1000)))
    ok = examples and spread <= 1
    record_criterion(11, "segmentation", ok, f"examples {'ok' if examples else 'wrong'}, max size spread {spread} over 1000 random n (<= 1)")
    assert ok


def test_criterion_12_end_to_end_determinism(synthetic_table, tmp_path):
    table, schema = synthetic_table
    assert main(["prep", str(table), str(schema), "--out", str(tmp_path / "prep")]) == 0
    outputs = []
    for name in ("first", "second"):
        cfg = tmp_path / f"{name}.json"
        write_json(cfg, {"manifest": str(tmp_path / "prep" / "manifest.json"), "seeds": [7], "output_dir": str(tmp_path / name)})
        assert main(["run", "--config", str(cfg)]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted((tmp_path / name).iterdir())})
    same = outputs[0] == outputs[1]
    ok = same and "report_seed7.json" in outputs[0]
    record_criterion(12, "end-to-end determinism", ok, f"{len(outputs[0])} output files, byte-identical across two runs: {same}")
    assert ok
