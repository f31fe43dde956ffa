import itertools
import math

import numpy as np
import pytest

from momentband.errors import (BadOrder, BudgetExceeded, NotCentered,
                               OrderTooHigh)
from momentband.ustat import (DiscreteLaw, SymmetricKernel, check_symmetry,
                              complete_ustat, hajek_projection,
                              hajek_residual,
                              hoeffding_components, incomplete_ustat,
                              kernel_law_moments, make_forest_moment_kernel,
                              make_kernel, permutation_block_average,
                              residual_scaling_experiment)

LAW = DiscreteLaw(support=np.array([-1.0, 0.0, 1.0]),
                  probs=np.array([0.25, 0.5, 0.25]))
SKEW_LAW = DiscreteLaw(support=np.array([-1.0, 0.5, 2.0]),
                       probs=np.array([0.3, 0.5, 0.2]))


def raw_product(order):
    return SymmetricKernel(order=order, fn=lambda t: np.prod(t, axis=1),
                           name="raw_product")


def test_complete_b1_is_mean():
    k = make_kernel("additive", 1, center=0.0)
    s = np.array([1.0, 2.0, 5.0])
    assert complete_ustat(k, s) == pytest.approx(s.mean(), abs=1e-14)


def test_complete_hand_enumeration():
    assert complete_ustat(raw_product(2), [1, 2, 3, 4]) == pytest.approx(35 / 6)


def test_complete_b_equals_n():
    k = raw_product(4)
    s = np.array([1.0, 2.0, 3.0, 4.0])
    assert complete_ustat(k, s) == 24.0


def test_complete_budget_and_order_errors():
    with pytest.raises(BudgetExceeded):
        complete_ustat(raw_product(10), np.arange(40.0), budget=1000)
    with pytest.raises(BadOrder):
        complete_ustat(raw_product(5), np.arange(3.0))


def test_incomplete_exhaustive_matches_complete():
    rng = np.random.default_rng(0)
    s = LAW.sample(12, rng)
    k = make_kernel("pairwise_interaction", 3, LAW)
    assert incomplete_ustat(k, s, r=1, seed=0, exhaustive=True) == \
        complete_ustat(k, s)


def test_incomplete_constant_kernel():
    k = SymmetricKernel(order=2, fn=lambda t: np.full(t.shape[0], 3.5))
    s = np.arange(8.0)
    for seed in (0, 1):
        assert incomplete_ustat(k, s, r=100, seed=seed) == 3.5


def test_incomplete_monte_carlo_error_bound():
    rng = np.random.default_rng(1)
    n, b, r = 20, 3, 50_000
    s = LAW.sample(n, rng)
    k = make_kernel("pairwise_interaction", b, LAW)
    full = complete_ustat(k, s)
    # independent oracle for the kernel's std over subsets
    vals = [k(np.array([s[list(c)]]))[0]
            for c in itertools.combinations(range(n), b)]
    std = float(np.std(vals, ddof=1))
    inc = incomplete_ustat(k, s, r=r, seed=2)
    assert abs(inc - full) <= 3.0 * std / math.sqrt(r)


def test_hajek_projection_additive_analytic():
    for law in (LAW, SKEW_LAW):
        k = make_kernel("additive", 3, law)
        for atom in law.support:
            # u1(d) = f(d) + (b-1) E f, and E f = 0 by centering
            assert hajek_projection(k, law, atom) == \
                pytest.approx(atom - law.mean, abs=1e-12)


def test_hajek_projection_product_degenerate():
    k = make_kernel("product", 2, LAW)
    for atom in LAW.support:
        assert hajek_projection(k, LAW, atom) == pytest.approx(0.0, abs=1e-14)


def test_hajek_projection_b1_identity():
    k = make_kernel("additive", 1, SKEW_LAW)
    for atom in SKEW_LAW.support:
        assert hajek_projection(k, SKEW_LAW, atom) == \
            pytest.approx(k(np.array([[atom]]))[0], abs=1e-14)


def test_hajek_residual_additive_cancels():
    rng = np.random.default_rng(3)
    for law in (LAW, SKEW_LAW):
        k = make_kernel("additive", 3, law)
        s = law.sample(14, rng)
        assert abs(hajek_residual(k, s, law)) <= 1e-12


def test_hajek_residual_degenerate_kernel():
    rng = np.random.default_rng(4)
    k = make_kernel("product", 2, LAW)
    s = LAW.sample(10, rng)
    assert hajek_residual(k, s, LAW) == pytest.approx(complete_ustat(k, s),
                                                      abs=1e-14)


def test_hajek_residual_requires_centered():
    with pytest.raises(NotCentered):
        hajek_residual(raw_product(2), np.arange(5.0), LAW)


def test_residual_dominated_by_hajek_scale():
    # pairwise kernel, n = 30, b = 3: the residual stays below 0.2x the
    # Hajek-term scale sqrt(b^2 sigma_b^2 / n) in >= 90% of draws (the
    # per-draw Hajek term itself is mean-zero, so a draw-by-draw ratio is
    # ill-posed near its zero crossings)
    n, b = 30, 3
    k = make_kernel("pairwise_interaction", b, LAW)
    sigma_b2, _ = kernel_law_moments(k, LAW)
    scale = math.sqrt(b * b * sigma_b2 / n)
    wins = 0
    reps = 200
    for rep in range(reps):
        rng = np.random.default_rng(500 + rep)
        s = LAW.sample(n, rng)
        if abs(hajek_residual(k, s, LAW)) <= 0.2 * scale:
            wins += 1
    assert wins >= 0.9 * reps


def test_hoeffding_additive_has_no_higher_components():
    rep = hoeffding_components(make_kernel("additive", 3, SKEW_LAW), SKEW_LAW)
    assert np.max(np.abs(rep.components[2])) <= 1e-12
    assert np.max(np.abs(rep.components[3])) <= 1e-12
    assert rep.reconstruction_max_err <= 1e-12


def test_hoeffding_product_structure():
    rep = hoeffding_components(make_kernel("product", 2, LAW), LAW)
    assert np.max(np.abs(rep.components[1])) <= 1e-14
    assert np.allclose(rep.components[2], np.outer(LAW.support, LAW.support),
                       atol=1e-14)


def test_hoeffding_orthogonality_and_degeneracy():
    for law in (LAW, SKEW_LAW):
        for name in ("pairwise_interaction", "additive_product"):
            for b in (2, 3):
                rep = hoeffding_components(make_kernel(name, b, law), law)
                assert rep.max_abs_mean <= 1e-10
                assert rep.max_abs_crosscov <= 1e-10
                assert rep.reconstruction_max_err <= 1e-10
                assert rep.degeneracy_max <= 1e-10


def test_hoeffding_order_cap():
    with pytest.raises(OrderTooHigh):
        hoeffding_components(make_kernel("additive", 4, LAW), LAW)


def test_permutation_block_average_matches_complete():
    rng = np.random.default_rng(5)
    s = SKEW_LAW.sample(6, rng)
    for name in ("pairwise_interaction", "product"):
        k = make_kernel(name, 2, SKEW_LAW)
        assert abs(permutation_block_average(k, s) - complete_ustat(k, s)) <= 1e-12


def test_registry_kernels_are_symmetric():
    rng = np.random.default_rng(6)
    s = SKEW_LAW.sample(20, rng)
    for name in ("additive", "product", "pairwise_interaction", "additive_product"):
        assert check_symmetry(make_kernel(name, 3, SKEW_LAW), s, rng)


def test_kernel_law_moments_match_direct_enumeration():
    k = make_kernel("pairwise_interaction", 2, LAW)
    sigma_b2, nu2 = kernel_law_moments(k, LAW)
    # direct: u(a,b) = a + b + ab over atom pairs
    tuples = np.array(list(itertools.product(LAW.support, repeat=2)))
    probs = np.array([LAW.probs[i] * LAW.probs[j]
                      for i in range(3) for j in range(3)])
    vals = k(tuples)
    assert nu2 == pytest.approx(np.sum(probs * vals ** 2)
                                - np.sum(probs * vals) ** 2, abs=1e-12)
    # u1(d) = d under this law
    assert sigma_b2 == pytest.approx(np.sum(LAW.probs * LAW.support ** 2), abs=1e-12)


def test_scaling_experiment_b1_row_is_zero():
    rep = residual_scaling_experiment(LAW, "additive", [12], [1], reps=10, seed=0)
    assert rep.rows[0].resid_q50 == 0.0
    assert rep.rows[0].resid_q90 == 0.0


def test_scaling_experiment_variance_check_and_trend():
    rep = residual_scaling_experiment(LAW, "additive_product", [40], [2, 3, 4],
                                      reps=40, seed=1)
    ratios = [r.ratio_med for r in rep.rows]
    assert all(r.variance_check_ok for r in rep.rows)
    assert ratios[0] > ratios[1] > ratios[2]


def test_forest_moment_kernel_bridges_knn_weights():
    rng = np.random.default_rng(7)
    x = rng.random((12, 1))
    m = rng.standard_normal(12)
    k = make_forest_moment_kernel(order=4, xunits=x, moments=m,
                                  query=np.array([0.5]), k=2)
    idx = np.array([[0, 3, 7, 9]], dtype=np.float64)
    units = idx[0].astype(int)
    d = np.abs(x[units, 0] - 0.5)
    nearest = units[np.lexsort((units, d))[:2]]
    assert k(idx)[0] == pytest.approx(m[nearest].mean(), abs=1e-12)
    assert check_symmetry(k, np.arange(12.0), rng)
