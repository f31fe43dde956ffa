import numpy as np
import pytest

from momentband.data import Observation
from momentband.errors import MissingNuisance, MissingTreatment, UnsupportedLaw
from momentband.moments import (CausalLaw, MomentSpec, NuisancePerturbation,
                                NuisanceValues, conditional_moment,
                                evaluate_terms, make_bernoulli_causal_law,
                                moment_residual, orthogonality_check)

CATE = MomentSpec("cate_aipw")
CMEAN = MomentSpec("conditional_mean")
PLUGIN = MomentSpec("plugin_contrast")


def obs(y, w=None, z=(0.0,)):
    z = np.asarray(z, dtype=np.float64)
    return Observation(y=y, w=w, z=z, x=z[:1])


def law_for_tests():
    # Z in {0, 1}, W|Z ~ Bern(pi(z)), Y(w) = z + w * (1 + z) + eps
    return make_bernoulli_causal_law(
        z_vals=[0.0, 1.0],
        pi_of_z=lambda z: 0.4 + 0.2 * z,
        tau_of_z=lambda z: 1.0 + z,
        base_of_z=lambda z: z,
        noise_vals=(-1.0, 1.0), noise_probs=(0.5, 0.5))


def test_evaluate_terms_hand_case():
    m1, m2 = evaluate_terms(CATE, obs(2.0, w=1),
                            NuisanceValues(mu0=0.5, mu1=1.0, pi=0.5))
    assert m1 == -1.0
    assert m2 == pytest.approx(2.5, abs=1e-14)


def test_evaluate_terms_conditional_mean():
    assert evaluate_terms(CMEAN, obs(3.0)) == (-1.0, 3.0)


def test_evaluate_terms_zero_residual():
    tau = 0.7
    g = NuisanceValues(mu0=1.0, mu1=1.0 + tau, pi=0.3)
    m1, m2 = evaluate_terms(CATE, obs(g.mu1, w=1), g)
    assert m2 == pytest.approx(tau, abs=1e-14)
    m1, m2 = evaluate_terms(CATE, obs(g.mu0, w=0), g)
    assert m2 == pytest.approx(tau, abs=1e-14)


def test_evaluate_terms_errors():
    with pytest.raises(MissingNuisance):
        evaluate_terms(CATE, obs(1.0, w=1), NuisanceValues(mu0=0.0, mu1=1.0))
    with pytest.raises(MissingTreatment):
        evaluate_terms(CATE, obs(1.0, w=None),
                       NuisanceValues(mu0=0.0, mu1=1.0, pi=0.5))


def test_moment_residual_definitions():
    rng = np.random.default_rng(0)
    n = 30
    w = rng.random(n)
    y = rng.standard_normal(n)
    m1 = np.full(n, -1.0)
    # theta = weighted mean drives the residual to zero
    theta = np.dot(w, y) / w.sum()
    assert moment_residual(w, m1, y, theta) == pytest.approx(0.0, abs=1e-12)
    # theta = 0 returns sum K m2
    assert moment_residual(w, m1, y, 0.0) == pytest.approx(np.dot(w, y))
    assert moment_residual(np.array([]), np.array([]), np.array([]), 1.0) == 0.0


def test_linearity_exact():
    rng = np.random.default_rng(1)
    g = NuisanceValues(mu0=0.3, mu1=1.1, pi=0.6)
    m1, m2 = evaluate_terms(CATE, obs(0.9, w=0), g)
    for theta in rng.standard_normal(5):
        assert m1 * theta + m2 == -theta + m2


def test_double_robustness_by_enumeration():
    law = law_for_tests()
    mu0, mu1, pi = law.true_nuisances()
    for x_cell in (0.0, 1.0):
        th0 = law.theta0(x_cell)
        # wrong mu, correct pi
        m_wrong_mu = conditional_moment(CATE, law, x_cell, 0.0,
                                        mu0 + 0.7, mu1 - 0.4, pi)
        assert m_wrong_mu == pytest.approx(th0, abs=1e-12)
        # wrong pi, correct mu
        m_wrong_pi = conditional_moment(CATE, law, x_cell, 0.0,
                                        mu0, mu1, np.clip(pi + 0.2, 0.05, 0.95))
        assert m_wrong_pi == pytest.approx(th0, abs=1e-12)


def test_theta0_matches_moment_root():
    law = law_for_tests()
    mu0, mu1, pi = law.true_nuisances()
    for x_cell in (0.0, 1.0):
        th0 = law.theta0(x_cell)
        assert conditional_moment(CATE, law, x_cell, th0, mu0, mu1, pi) == \
            pytest.approx(0.0, abs=1e-12)
        assert th0 == pytest.approx(1.0 + x_cell, abs=1e-12)


def test_orthogonality_slope_ratio():
    law = law_for_tests()
    direction = NuisancePerturbation(mu1=1.0, pi=0.05)
    for t in (1e-2, 1e-3):
        d1 = orthogonality_check(CATE, law, 0.0, direction, t)
        d2 = orthogonality_check(CATE, law, 0.0, direction, t / 2)
        assert 1.7 <= abs(d1 / d2) <= 2.3


def test_orthogonality_mu_only_direction_is_exactly_flat():
    # with correct pi, a pure mu perturbation moves the AIPW moment not at all
    law = law_for_tests()
    for t in (1e-1, 1e-2, 1e-3):
        d = orthogonality_check(CATE, law, 0.0, NuisancePerturbation(mu1=1.0), t)
        assert abs(d) <= 1e-10


def test_plugin_contrast_is_not_orthogonal():
    law = law_for_tests()
    h = 0.8
    direction = NuisancePerturbation(mu1=h)
    d1 = orthogonality_check(PLUGIN, law, 0.0, direction, 1e-2)
    d2 = orthogonality_check(PLUGIN, law, 0.0, direction, 1e-3)
    assert abs(d1) >= 0.5 * h
    assert d1 == pytest.approx(d2, abs=1e-9)
    assert d1 == pytest.approx(h, abs=1e-9)


def test_null_direction_is_zero():
    law = law_for_tests()
    d = orthogonality_check(CATE, law, 0.0, NuisancePerturbation(), 1e-2)
    assert d == 0.0


def test_unsupported_x_cell():
    law = law_for_tests()
    with pytest.raises(UnsupportedLaw):
        law.theta0(3.0)


def test_causal_law_validation():
    with pytest.raises(UnsupportedLaw):
        CausalLaw(y0=np.array([0.0, 1.0]), y1=np.array([0.0, 1.0]),
                  w=np.array([0, 1]), z=np.array([0.0, 1.0]),
                  probs=np.array([0.6, 0.6]))
