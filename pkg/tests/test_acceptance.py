"""Acceptance suite: ten criteria, each printing one pass/fail line.

Run with `pytest tests/test_acceptance.py -s` to see the lines as they
complete (they also appear under -rA). Identity criteria carry exact
tolerances; Monte Carlo criteria pin their rep counts, thresholds, and
runtime budgets. The session warm-up fixture compiles the jitted kernels, so
the budgets measure compute, not compilation.
"""

import itertools
import math
import os
import time

import numpy as np
import pytest

from momentband.bootstrap import FitState, FoldState, compute_roots, studentize
from momentband.kernels import ForestConfig, fit_forest
from momentband.estimator import solve_queries
from momentband.moments import (MomentSpec, NuisancePerturbation,
                                make_bernoulli_causal_law, orthogonality_check)
from momentband.pipeline import PipelineConfig
from momentband.sim import DgpSpec, Regime, run_coverage
from momentband.ustat import (DiscreteLaw, complete_ustat, hajek_residual,
                              hoeffding_components, incomplete_ustat,
                              make_kernel, permutation_block_average,
                              residual_scaling_experiment)

THREADS = min(8, os.cpu_count() or 1)

LAW3 = DiscreteLaw(support=np.array([-1.0, 0.5, 2.0]),
                   probs=np.array([0.3, 0.5, 0.2]))


def report(num, name, ok, detail="", elapsed=None):
    status = "PASS" if ok else "FAIL"
    timing = f" [{elapsed:.2f}s]" if elapsed is not None else ""
    print(f"[ACCEPTANCE] criterion {num} ({name}): {status}{timing} {detail}")


def mean_state(y, seed=11):
    n = y.shape[0]
    x = (np.arange(n, dtype=np.float64) / n).reshape(-1, 1)
    cfg = ForestConfig(kind="knn", b=n, trees=1, knn_k=n).resolve(n)
    forest = fit_forest(x, y, cfg, 3)
    m1 = np.full(n, -1.0)
    queries = np.array([[0.5]])
    theta, _, _, st = solve_queries(forest, queries, m1, y)
    return FitState(x_units=x, m1=m1, m2=y.copy(), queries=queries, config=cfg,
                    master_seed=seed, universe=np.arange(n), theta_full=theta,
                    statuses=st, forest=forest)


def crossfit_mean_state(y):
    n = y.shape[0]
    x = (np.arange(n, dtype=np.float64) / n).reshape(-1, 1)
    cfg = ForestConfig(kind="knn", b=n // 2, trees=1, knn_k=n // 2).resolve(n // 2)
    folds = [FoldState(indices=np.arange(0, n // 2), config=cfg,
                       theta=np.array([y[:n // 2].mean()])),
             FoldState(indices=np.arange(n // 2, n), config=cfg,
                       theta=np.array([y[n // 2:].mean()]))]
    theta_r = np.array([0.5 * (y[:n // 2].mean() + y[n // 2:].mean())])
    return FitState(x_units=x, m1=np.full(n, -1.0), m2=y.copy(),
                    queries=np.array([[0.5]]), config=cfg, master_seed=1,
                    universe=np.arange(n), theta_full=theta_r,
                    statuses=["ok"], folds=folds)


def test_criterion_01_linear_root_identity():
    t0 = time.perf_counter()
    n, B = 100, 50
    rng = np.random.default_rng(101)
    y = rng.standard_normal(n)
    state = mean_state(y)
    worst = 0.0
    balanced = True
    roots = compute_roots(state, B, 7, "half_exact", keep_subsets=True)
    for l in range(B):
        v = np.full(n, -1.0)
        v[roots.subsets[l]] = 1.0
        balanced &= (v.sum() == 0.0)
        worst = max(worst, abs(roots.roots[l, 0] - v @ y / n))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and balanced and elapsed < 1.0
    report(1, "linear-root identity", ok,
           f"max |root - (1/n) sum V_i Y_i| = {worst:.2e}, sum V_i = 0 exact",
           elapsed)
    assert worst <= 1e-12
    assert balanced
    assert elapsed < 1.0


def test_criterion_02_ustat_enumeration_oracle():
    t0 = time.perf_counter()
    n, b = 8, 3
    rng = np.random.default_rng(202)
    sample = LAW3.sample(n, rng)
    kernel = make_kernel("pairwise_interaction", b, LAW3)
    got = complete_ustat(kernel, sample)
    # independent oracle: direct loop over all 56 subsets
    subsets = list(itertools.combinations(range(n), b))
    assert len(subsets) == 56
    oracle = sum(float(kernel(sample[list(c)][None, :])[0]) for c in subsets) / 56
    inc = incomplete_ustat(kernel, sample, r=1, seed=0, exhaustive=True)
    elapsed = time.perf_counter() - t0
    ok = abs(got - oracle) <= 1e-12 and abs(inc - got) <= 1e-12 and elapsed < 1.0
    report(2, "U-statistic oracle", ok,
           f"|complete - oracle| = {abs(got - oracle):.2e}", elapsed)
    assert abs(got - oracle) <= 1e-12
    assert abs(inc - got) <= 1e-12
    assert elapsed < 1.0


def test_criterion_03_hoeffding_hajek_exactness():
    t0 = time.perf_counter()
    worst_mean = worst_cc = worst_recon = worst_degen = 0.0
    for b in (2, 3):
        for name in ("pairwise_interaction", "product", "additive"):
            rep = hoeffding_components(make_kernel(name, b, LAW3), LAW3)
            worst_mean = max(worst_mean, rep.max_abs_mean)
            worst_cc = max(worst_cc, rep.max_abs_crosscov)
            worst_recon = max(worst_recon, rep.reconstruction_max_err)
            worst_degen = max(worst_degen, rep.degeneracy_max)
    rng = np.random.default_rng(303)
    resid = abs(hajek_residual(make_kernel("additive", 3, LAW3),
                               LAW3.sample(20, rng), LAW3))
    elapsed = time.perf_counter() - t0
    ok = (worst_recon <= 1e-10 and worst_mean <= 1e-10 and worst_cc <= 1e-10
          and worst_degen <= 1e-10 and resid <= 1e-12 and elapsed < 5.0)
    report(3, "Hoeffding/Hajek exactness", ok,
           f"recon={worst_recon:.1e} mean={worst_mean:.1e} "
           f"crosscov={worst_cc:.1e} degen={worst_degen:.1e} "
           f"additive residual={resid:.1e}", elapsed)
    assert worst_recon <= 1e-10
    assert worst_mean <= 1e-10
    assert worst_cc <= 1e-10
    assert worst_degen <= 1e-10
    assert resid <= 1e-12
    assert elapsed < 5.0


def test_criterion_04_permutation_representation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    sample = LAW3.sample(6, rng)
    worst = 0.0
    for name in ("pairwise_interaction", "product", "additive_product"):
        kernel = make_kernel(name, 2, LAW3)
        diff = abs(permutation_block_average(kernel, sample)
                   - complete_ustat(kernel, sample))
        worst = max(worst, diff)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 5.0
    report(4, "permutation representation", ok,
           f"max |perm avg - complete| = {worst:.2e} over 720 permutations",
           elapsed)
    assert worst <= 1e-12
    assert elapsed < 5.0


def test_criterion_05_orthogonality_contrast():
    t0 = time.perf_counter()
    law = make_bernoulli_causal_law(
        z_vals=[0.0, 1.0], pi_of_z=lambda z: 0.4 + 0.2 * z,
        tau_of_z=lambda z: 1.0 + z, base_of_z=lambda z: z)
    cate = MomentSpec("cate_aipw")
    plugin = MomentSpec("plugin_contrast")
    # a pure mu perturbation cancels exactly under the true propensity, so the
    # quadratic remainder is exposed along a joint (mu1, pi) direction
    direction = NuisancePerturbation(mu1=1.0, pi=0.05)
    ratios = []
    for t in (1e-2, 1e-3):
        d1 = orthogonality_check(cate, law, 0.0, direction, t)
        d2 = orthogonality_check(cate, law, 0.0, direction, t / 2)
        ratios.append(abs(d1 / d2))
    h = 1.0
    dp1 = orthogonality_check(plugin, law, 0.0, NuisancePerturbation(mu1=h), 1e-2)
    dp2 = orthogonality_check(plugin, law, 0.0, NuisancePerturbation(mu1=h), 1e-3)
    elapsed = time.perf_counter() - t0
    ratios_ok = all(1.7 <= r <= 2.3 for r in ratios)
    plugin_ok = abs(dp1) >= 0.5 * h and abs(dp1 - dp2) <= 1e-8 * (1 + abs(dp1))
    ok = ratios_ok and plugin_ok and elapsed < 5.0
    report(5, "orthogonality contrast", ok,
           f"slope ratios = {ratios[0]:.3f}, {ratios[1]:.3f}; "
           f"plugin D = {dp1:.3f} (t-stable)", elapsed)
    assert ratios_ok
    assert plugin_ok
    assert elapsed < 5.0


def _lambda_for(state, mode, B, seed):
    roots = compute_roots(state, B, seed, mode)
    lam, _, _ = studentize(roots, n=state.n)
    return float(lam[0])


def _criterion6_task(seed):
    rng = np.random.default_rng(6000 + seed)
    y = rng.standard_normal(500)
    state = mean_state(y, seed=seed)
    lam_half = _lambda_for(state, "half_exact", 2000, seed)
    lam_bin = _lambda_for(state, "binomial", 2000, seed)
    lam_cf = _lambda_for(crossfit_mean_state(y), "crossfit", 2000, seed)
    return (abs(lam_half ** 2 / y.var(ddof=1) - 1.0),
            abs(lam_bin / lam_half - 1.0),
            abs(lam_cf / lam_half - 1.0))


def test_criterion_06_variance_accuracy():
    from momentband.parallel import pmap_ordered
    t0 = time.perf_counter()
    results = pmap_ordered(_criterion6_task, range(50), threads=THREADS,
                           chunksize=4)
    half_err = np.array([r[0] for r in results])
    bin_err = np.array([r[1] for r in results])
    cf_err = np.array([r[2] for r in results])
    hits = int(np.sum(half_err <= 0.2))
    elapsed = time.perf_counter() - t0
    ok = (hits >= 48 and np.all(bin_err <= 0.15) and np.all(cf_err <= 0.15)
          and elapsed < 30.0)
    report(6, "variance accuracy", ok,
           f"|lam^2/Var - 1| <= 0.2 in {hits}/50 seeds; "
           f"max mode gaps: binomial {bin_err.max():.3f}, "
           f"crossfit {cf_err.max():.3f}", elapsed)
    assert hits >= 0.95 * 50
    assert np.all(bin_err <= 0.15)
    assert np.all(cf_err <= 0.15)
    assert elapsed < 30.0


def test_criterion_07_desk_scale_coverage():
    t0 = time.perf_counter()
    rep = run_coverage(DgpSpec(kind="linear_cate"), base_n=2000,
                       multipliers=[1.0], regimes=[Regime("const", 0.05)],
                       reps=200, alpha=0.1, seed=7007, grid_resolution=25,
                       threads=THREADS)
    c = rep.cells[0]
    elapsed = time.perf_counter() - t0
    ok = (c.failures == 0 and c.cov_sim >= 0.88 and c.cov_lower >= 0.93
          and c.cov_upper >= 0.93 and elapsed < 600.0)
    report(7, "desk-scale coverage", ok,
           f"simultaneous {c.cov_sim:.3f}, lower {c.cov_lower:.3f}, "
           f"upper {c.cov_upper:.3f}, width {c.width_mean:.3f} "
           f"(n=2000, d=25, B=200, 200 reps)", elapsed)
    assert c.failures == 0
    assert c.cov_sim >= 0.88
    assert c.cov_lower >= 0.93
    assert c.cov_upper >= 0.93
    assert elapsed < 600.0


def test_criterion_08_bias_variance_pattern():
    t0 = time.perf_counter()
    rep = run_coverage(DgpSpec(kind="linear_cate"), base_n=2000,
                       multipliers=[1.0],
                       regimes=[Regime("const", 0.05), Regime("const", 0.025),
                                Regime("const", 0.0125)],
                       reps=200, alpha=0.1, seed=8008, grid_resolution=25,
                       threads=THREADS)
    cell = {c.bn: c for c in rep.cells}
    dw = cell[0.05].width_mean - cell[0.025].width_mean
    se_w = math.hypot(cell[0.05].width_se, cell[0.025].width_se)
    db = cell[0.0125].bias_max_mean - cell[0.05].bias_max_mean
    se_b = math.hypot(cell[0.0125].bias_max_se, cell[0.05].bias_max_se)
    elapsed = time.perf_counter() - t0
    ok = dw >= 2.0 * se_w and db >= 2.0 * se_b and elapsed < 900.0
    report(8, "bias-variance pattern", ok,
           f"width(0.05)-width(0.025) = {dw:.4f} ({dw / se_w:.1f} se); "
           f"bias(0.0125)-bias(0.05) = {db:.4f} ({db / se_b:.1f} se)", elapsed)
    assert dw >= 2.0 * se_w
    assert db >= 2.0 * se_b
    assert elapsed < 900.0


def test_criterion_09_hajek_residual_dominance_trend():
    t0 = time.perf_counter()
    law = DiscreteLaw(support=np.array([-1.0, 0.0, 1.0]),
                      probs=np.array([0.25, 0.5, 0.25]))
    # the additive-plus-full-interaction kernel carries the top-order
    # component whose residual shows the (b/n)^{b/2}-flavored decay
    rep = residual_scaling_experiment(law, "additive_product", [40], [2, 3, 4],
                                      reps=200, seed=9009)
    ratios = [r.ratio_med for r in rep.rows]
    checks = [r.variance_check_ok for r in rep.rows]
    # the variance ordering also holds for the plain pairwise kernel
    rep_pw = residual_scaling_experiment(law, "pairwise_interaction", [40],
                                         [2, 3, 4], reps=20, seed=9010)
    checks += [r.variance_check_ok for r in rep_pw.rows]
    elapsed = time.perf_counter() - t0
    decreasing = ratios[0] > ratios[1] > ratios[2]
    ok = decreasing and all(checks) and elapsed < 120.0
    report(9, "Hajek-residual dominance trend", ok,
           f"ratio(b=2,3,4) = {ratios[0]:.4f}, {ratios[1]:.4f}, "
           f"{ratios[2]:.4f}; b*sigma_b^2 <= 1.05*nu^2 in all cells", elapsed)
    assert decreasing
    assert all(checks)
    assert elapsed < 120.0


def _roots_all_modes(threads):
    rng = np.random.default_rng(1010)
    y = rng.standard_normal(100)
    out = []
    state = mean_state(y)
    for mode in ("half_exact", "binomial"):
        out.append(compute_roots(state, 50, 3, mode, threads=threads).roots)
    out.append(compute_roots(crossfit_mean_state(y), 50, 3, "crossfit",
                             threads=threads).roots)
    return out


def _coverage_rows(threads):
    rep = run_coverage(DgpSpec(kind="linear_cate", noise_scale=0.4),
                       base_n=240, multipliers=[1.0],
                       regimes=[Regime("const", 0.1)], reps=8, alpha=0.1,
                       seed=1234, grid_resolution=4,
                       pipeline=PipelineConfig(replicates=30, trees=120,
                                               nuisance_trees=60),
                       threads=threads)
    return rep.to_rows()


def test_criterion_10_determinism_across_thread_counts():
    t0 = time.perf_counter()
    base_roots = _roots_all_modes(1)
    base_rows = _coverage_rows(1)
    thread_ok = True
    for threads in (4, 8):
        for a, b in zip(base_roots, _roots_all_modes(threads)):
            thread_ok &= bool(np.array_equal(a, b))
        thread_ok &= _coverage_rows(threads) == base_rows

    # single-threaded reruns of the enumeration/identity criteria are
    # bit-identical
    rng = np.random.default_rng(202)
    sample = LAW3.sample(8, rng)
    k = make_kernel("pairwise_interaction", 3, LAW3)
    rerun_ok = complete_ustat(k, sample) == complete_ustat(k, sample)
    law = DiscreteLaw(support=np.array([-1.0, 0.0, 1.0]),
                      probs=np.array([0.25, 0.5, 0.25]))
    r1 = residual_scaling_experiment(law, "additive_product", [30], [2],
                                     reps=20, seed=5).to_rows()
    r2 = residual_scaling_experiment(law, "additive_product", [30], [2],
                                     reps=20, seed=5).to_rows()
    rerun_ok &= (r1 == r2)
    elapsed = time.perf_counter() - t0
    ok = thread_ok and rerun_ok
    report(10, "determinism across thread counts", ok,
           "roots matrices and coverage reports bit-identical at 1/4/8 threads",
           elapsed)
    assert thread_ok
    assert rerun_ok
