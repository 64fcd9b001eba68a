"""Exit criteria of the package, one test each; a PASS/FAIL line per criterion goes to the terminal summary.

Run alone with ``pytest -m acceptance -s``.
"""
import math
import os
import time

import numpy as np
import pytest

import conftest
from balldiff import geometry
from balldiff.experiments import (
    covariation_errors,
    hitting_fractions,
    make_config,
    run_experiment,
    sandwich_violation,
    trend_statistic,
)
from balldiff.noise import DEFAULT_SEED
from balldiff.processes import Coefficients, SquaredRadius, WfParams, WrightFisher

pytestmark = pytest.mark.acceptance

SEED = DEFAULT_SEED
THREADS = os.cpu_count() or 1
DT_LIST = (1e-3, 5e-4, 2.5e-4)


def record(label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def by_name(result, name):
    return next(r for r in result.reports if r.name == name)


def run(experiment, **kw):
    return run_experiment(make_config(experiment, seed=SEED, threads=THREADS, **kw))


def test_criterion_1_sigma_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for n in (1, 2, 3, 5):
        z = rng.standard_normal((10**5, n))
        x = z / np.linalg.norm(z, axis=1, keepdims=True) * rng.random((10**5, 1)) ** (1 / n)
        s = geometry.sigma(x)
        target = np.eye(n) - x[:, :, None] * x[:, None, :]
        worst = max(worst, float(np.max(np.abs(s @ np.swapaxes(s, -1, -2) - target))))
    elapsed = time.perf_counter() - t0
    record(1, worst < 1e-12 and elapsed < 5, f"max error {worst:.2e} (< 1e-12), {elapsed:.2f}s (< 5s)")


def test_criterion_2_archimedes_and_uniform_ball():
    t0 = time.perf_counter()
    one = run("archimedes", n=1, ell=2.0, dt=1e-3, paths=5000, burn_in=5.0)
    two = run("archimedes", n=2, ell=2.0, dt=1e-3, paths=5000, burn_in=5.0)
    elapsed = time.perf_counter() - t0
    ks = by_name(one, "archimedes_ball")
    chi = by_name(two, "archimedes_ball")
    ok = ks.passed and chi.passed and elapsed < 120
    record(2, ok, f"n=1 KS p={ks.p_value:.3f}; n=2 chi2={chi.statistic:.2f} (crit {chi.threshold:.2f}); "
                  f"{elapsed:.0f}s (< 120s)")


def test_criterion_3_squared_radius_is_wright_fisher():
    t0 = time.perf_counter()
    res = run("wf-radial", n=2, ell=3.0, T=1.0, dt=1e-4, paths=5000, x0=(0.5, 0.0))
    elapsed = time.perf_counter() - t0
    rep = by_name(res, "wf_radial_ks")
    record(3, rep.passed and elapsed < 300, f"two-sample KS p={rep.p_value:.3f} (>= 0.01), {elapsed:.0f}s (< 300s)")


def test_criterion_4_quadratic_covariation():
    dt = 1e-4
    c = Coefficients.from_specs("linear:1,0.5", "const:3", 2)
    errs = covariation_errors(c, np.array([0.5, 0.0]), 1.0, dt, SEED, 50)
    bound = 5 * math.sqrt(dt)
    record(4, float(np.max(errs)) < bound, f"max relative Frobenius error {np.max(errs):.4f} (< {bound:.3f})")


def test_criterion_5_warren_yor():
    res = run("warren-yor", alpha=2.0, beta=2.0, x0=(1.0, 1.0), T=0.5, dt=1e-3, paths=5000)
    rep = by_name(res, "warren_yor_ks")
    record(5, rep.passed, f"quotient vs WF(2,2) KS p={rep.p_value:.3f} (>= 0.01), N={rep.sample_size}")


def test_criterion_6a_zero_not_hit():
    c = Coefficients.projected(2, 2.0)
    f = hitting_fractions(SquaredRadius(c), 0.5, 1.0, DT_LIST, SEED, 1000, THREADS, 1e-4, "below")
    ok = trend_statistic(f) <= 0 and f[-1] < 0.01
    record("6a", ok, "fractions " + ", ".join(f"{v:.3f}" for v in f) + " (non-increasing, last < 0.01)")


def test_criterion_6b_one_not_hit():
    c = Coefficients.from_specs("const:1", "const:2.5", 2)
    f = hitting_fractions(SquaredRadius(c), 0.5, 1.0, DT_LIST, SEED, 1000, THREADS, 1 - 1e-4, "above")
    ok = trend_statistic(f) <= 0 and f[-1] < 0.01
    record("6b", ok, "fractions " + ", ".join(f"{v:.3f}" for v in f) + " (non-increasing, last < 0.01)")


def test_criterion_7_comparison_sandwich():
    dt = 1e-4
    c = Coefficients.from_specs("linear:1,0.5", "linear:1,1", 2)
    viol = sandwich_violation(c, 0.5, 1.0, dt, SEED, 100, THREADS)
    record(7, viol <= 0, f"largest excursion beyond the 2dt band {viol:.2e} (<= 0), M={c.M:.3g}, m={c.m:.3g}")


def test_criterion_8_skew_product():
    res = run("skew", n=2, gamma_spec="const:1", g_spec="const:2", T=1.0, dt=1e-4, paths=1000)
    cells = by_name(res, "skew_reconstruction_cells")
    corr = by_name(res, "skew_independence_corr")
    record("8a", cells.passed, f"reconstruction error {cells.statistic:.3f} cells (<= 2)")
    record("8b", corr.passed, f"|corr(R_T, V^1)| = {corr.statistic:.4f} (< {corr.threshold:.4f})")


def test_criterion_9_rapid_spinning():
    res = run("spin", n=3, gamma_spec="const:1", g_spec="const:2.5", T=0.1, dt=1e-3, paths=5000)
    rep = by_name(res, "spin_direction_uniformity")
    record(9, rep.passed, f"sphere uniformity p={rep.p_value:.3f} (>= 0.01), N={rep.sample_size}")


def test_criterion_10_pathwise_uniqueness_surrogate():
    res = run("uniqueness", n=2, ell=2.0, T=0.5, dt_list=DT_LIST, paths=200)
    trend = by_name(res, "uniqueness_sup_trend")
    finest = by_name(res, "uniqueness_sup_finest")
    w = by_name(res, "uniqueness_w_diagnostic")
    ok = trend.passed and finest.passed and w.passed
    record(10, ok, f"sup trend {trend.statistic:.2e} (<= 0), finest mean sup {finest.statistic:.4f} (< 0.05), "
                   f"max W/(10 dt) {w.statistic:.3f} (<= 1)")


def test_criterion_11_wf_threshold():
    fr = []
    for a in (1.0, 2.0):
        wf = WrightFisher(WfParams(a, 2.0))
        fr.append(hitting_fractions(wf, 0.1, 1.0, (1e-4,), SEED, 1000, THREADS, 1e-4, "below")[0])
    ratio = fr[1] / fr[0] if fr[0] > 0 else 0.0
    record(11, ratio <= 0.1, f"WF(1,2) {fr[0]:.3f}, WF(2,2) {fr[1]:.3f}, ratio {ratio:.3f} (<= 0.1)")
