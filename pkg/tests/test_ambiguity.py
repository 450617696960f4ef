import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from erd3ro.ambiguity import (DiscreteDistribution, RadiusSpec, empirical_residual_distribution,
                              kappa_concentration, kappa_covariate, kappa_noise, radius_by_loocv,
                              theoretical_radius, wasserstein_distance)
from erd3ro.oracles import permutation_transport, transport_lp_highs


def rand_dist(rng, m=None, d=2):
    m = m or int(rng.integers(1, 7))
    w = rng.dirichlet(np.ones(m))
    return DiscreteDistribution(rng.normal(size=(m, d)) * 3, w)


def test_empirical_distribution():
    P = empirical_residual_distribution(np.array([[1.5, -2.0]]))
    assert P.size == 1 and P.weights[0] == 1.0
    Q = empirical_residual_distribution(np.ones((4, 2)))
    assert Q.size == 4
    np.testing.assert_array_equal(Q.weights, 0.25)
    R = empirical_residual_distribution(np.random.default_rng(0).normal(size=(7, 3)))
    assert R.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_wasserstein_examples():
    rng = np.random.default_rng(0)
    P = rand_dist(rng)
    assert wasserstein_distance(P, P) == pytest.approx(0.0, abs=1e-12)
    a, b = np.array([[1.0, 2.0]]), np.array([[-1.0, 4.5]])
    for p in (1, 2):
        W = wasserstein_distance(DiscreteDistribution(a, [1.0]), DiscreteDistribution(b, [1.0]), p=p)
        assert W == pytest.approx(4.5)
    U = DiscreteDistribution.uniform(np.array([0.0, 1.0]))
    D = DiscreteDistribution(np.array([0.5]), [1.0])
    assert wasserstein_distance(U, D) == pytest.approx(0.5)


@pytest.mark.parametrize("seed", range(30))
def test_wasserstein_matches_independent_routes(seed):
    rng = np.random.default_rng(seed)
    P, Q = rand_dist(rng), rand_dist(rng)
    for p, norm in ((1, "l1"), (2, "l2")):
        W = wasserstein_distance(P, Q, p=p, norm=norm)
        assert W == pytest.approx(transport_lp_highs(P.atoms, P.weights, Q.atoms, Q.weights, p, norm), abs=1e-6)
    m = int(rng.integers(1, 7))
    A, B = rng.normal(size=(m, 2)), rng.normal(size=(m, 2))
    W = wasserstein_distance(DiscreteDistribution.uniform(A), DiscreteDistribution.uniform(B))
    assert W == pytest.approx(permutation_transport(A, B), abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 30))
def test_wasserstein_metric_properties(seed):
    rng = np.random.default_rng(seed)
    P, Q, R = rand_dist(rng), rand_dist(rng), rand_dist(rng)
    v = rng.normal(size=2) * 10
    assert abs(wasserstein_distance(P.shift(v), Q.shift(v)) - wasserstein_distance(P, Q)) <= 1e-9 * (
        1 + wasserstein_distance(P, Q))
    pq, qr, pr = (wasserstein_distance(P, Q), wasserstein_distance(Q, R), wasserstein_distance(P, R))
    assert pr <= pq + qr + 1e-9
    assert wasserstein_distance(P, Q) == pytest.approx(wasserstein_distance(Q, P), abs=1e-9)
    assert wasserstein_distance(P, Q, 1, "l2") <= wasserstein_distance(P, Q, 2, "l2") + 1e-9


def test_wasserstein_rejects_unsupported():
    P = DiscreteDistribution.uniform(np.zeros((2, 1)))
    with pytest.raises(ValueError):
        wasserstein_distance(P, P, p=3)
    with pytest.raises(ValueError):
        wasserstein_distance(P, DiscreteDistribution.uniform(np.zeros((2, 2))))


def test_radius_composition_of_addends():
    alpha, n, x = 0.2, 100, np.array([1.0, 0.0])
    L = math.log(4 / alpha)
    spec = RadiusSpec("theoretical", alpha=alpha, C1=0.5 * 0.01 * n / L, C3=0.5 * 0.01 * n / L,
                      C2=0.01 * n / L, c1=1.0, c2=math.log(2 / alpha) / (0.1 * n), c3=1.0)
    assert kappa_covariate(alpha / 4, n, x, spec.C1, spec.C3) == pytest.approx(0.1)
    assert kappa_noise(alpha / 4, n, spec.C2) == pytest.approx(0.1)
    assert kappa_concentration(alpha, n, spec.c1, spec.c2, spec.c3) == pytest.approx(0.1)
    assert theoretical_radius(spec, n, x) == pytest.approx(0.3)


def test_radius_scaling_law():
    x = np.array([2.0, 1.0])
    assert kappa_concentration(0.2, 400, 1, 1, 2) == pytest.approx(kappa_concentration(0.2, 100, 1, 1, 2) / 2)
    assert kappa_covariate(0.05, 400, x, 1, 1) == pytest.approx(kappa_covariate(0.05, 100, x, 1, 1) / 2)
    assert kappa_noise(0.05, 400, 1) == pytest.approx(kappa_noise(0.05, 100, 1) / 2)


def test_radius_hand_arithmetic():
    spec = RadiusSpec("theoretical", alpha=0.4, C1=1.0, C2=1.0, C3=1e-300, c1=1.0, c2=1.0, c3=2.0)
    # Both regression terms are evaluated at alpha/4 = 0.1, the concentration term at alpha.
    want = 2 * math.sqrt(math.log(10) / 100) + math.sqrt(math.log(5) / 100)
    assert theoretical_radius(spec, 100, np.array([1.0])) == pytest.approx(want, rel=1e-12)


def test_radius_spec_parse_and_validation():
    assert RadiusSpec.parse("fixed:2.5").fixed_value == 2.5
    assert RadiusSpec.parse("loocv").mode == "cross_validated"
    assert RadiusSpec.parse("theory").mode == "theoretical"
    for bad in ("fixed:-1", "fixed:nan", "median"):
        with pytest.raises(ValueError):
            RadiusSpec.parse(bad)
    with pytest.raises(ValueError):
        theoretical_radius(RadiusSpec("theoretical", alpha=1.5), 10, [0.0])


def test_loocv_single_candidate_and_dominance():
    assert radius_by_loocv(5, [7.0], lambda k, c: [np.nan]).radius == 7.0
    costs = {1.0: 3.0, 10.0: 1.0, 50.0: 2.0}
    res = radius_by_loocv(4, [50.0, 1.0, 10.0], lambda k, c: [costs[v] + k for v in c])
    assert res.radius == 10.0
    assert res.mean_costs[1.0] == pytest.approx(4.5)


def test_loocv_ties_and_failures():
    res = radius_by_loocv(3, [10.0, 1.0], lambda k, c: [1.0 for _ in c])
    assert res.radius == 1.0
    res = radius_by_loocv(3, [1.0, 10.0], lambda k, c: [np.nan if v == 1.0 and k == 2 else 5.0 for v in c])
    assert res.radius == 10.0 and res.failed == (1.0,)
    with pytest.raises(RuntimeError):
        radius_by_loocv(2, [1.0, 2.0], lambda k, c: [np.nan, np.nan])
