import numpy as np
import pytest

from erd3ro.lp import (EQ, GE, LE, EqualityFormLP, LinearProgram, LpStatus, SimplexOptions, lp_to_text,
                       solve_lp)
from erd3ro.oracles import vertex_enumeration_min


def test_one_variable_bound():
    lp = LinearProgram(np.array([1.0]), np.array([[1.0]]), np.array([GE]), np.array([3.0]),
                       np.array([-np.inf]), np.array([np.inf]))
    sol = solve_lp(lp)
    assert sol.status is LpStatus.OPTIMAL
    assert sol.x[0] == pytest.approx(3.0)
    assert sol.duals[0] == pytest.approx(1.0)


def test_equality_form_tiny_maximisation():
    # max 5 pi  s.t.  pi + s = 2, pi, s >= 0
    eq = EqualityFormLP(np.array([[1.0, 1.0]]), np.array([2.0]))
    res = eq.solve(np.array([5.0, 0.0]), maximize=True)
    assert res.status is LpStatus.OPTIMAL
    assert res.objective == pytest.approx(10.0)
    np.testing.assert_allclose(res.x, [2.0, 0.0])


@pytest.mark.parametrize("seed", range(50))
def test_random_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 6), rng.integers(1, 5)
    A = rng.normal(size=(m, n))
    b = rng.uniform(0.5, 3.0, m)
    c = rng.normal(size=n)
    A_box = np.vstack([A, np.eye(n)])
    b_box = np.concatenate([b, np.full(n, 10.0)])
    ref, _ = vertex_enumeration_min(c, A_box, b_box)
    lp = LinearProgram(c, A_box, np.full(m + n, LE), b_box, np.zeros(n), np.full(n, np.inf))
    for backend in ("simplex", "highs"):
        sol = solve_lp(lp, backend=backend)
        assert sol.status is LpStatus.OPTIMAL
        assert sol.objective == pytest.approx(ref, abs=1e-6 * (1 + abs(ref)))


@pytest.mark.parametrize("seed", range(10))
def test_random_mixed_sense_lp_against_highs(seed):
    rng = np.random.default_rng(100 + seed)
    n, m = 8, 8
    x0 = rng.uniform(-1, 1, n)
    A = rng.normal(size=(m, n))
    senses = rng.choice([LE, EQ, GE], m)
    slack = rng.uniform(0, 1, m)
    b = A @ x0 + np.where(senses == LE, slack, np.where(senses == GE, -slack, 0.0))
    lp = LinearProgram(rng.normal(size=n), A, senses, b, np.full(n, -3.0), np.full(n, 3.0))
    s1, s2 = solve_lp(lp), solve_lp(lp, backend="highs")
    assert s1.objective == pytest.approx(s2.objective, abs=1e-7 * (1 + abs(s2.objective)))
    r = A @ s1.x - b
    assert np.all(r[senses == LE] <= 1e-7) and np.all(r[senses == GE] >= -1e-7)
    assert np.all(np.abs(r[senses == EQ]) <= 1e-7)


def test_duals_are_sensitivities():
    rng = np.random.default_rng(7)
    A = rng.uniform(0.5, 2.0, (3, 4))
    b = rng.uniform(1.0, 2.0, 3)
    c = rng.uniform(1.0, 3.0, 4)
    mk = lambda bb: LinearProgram(c, A, np.full(3, GE), bb, np.zeros(4), np.full(4, np.inf))
    sol = solve_lp(mk(b))
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1e-6
        d = (solve_lp(mk(b + e)).objective - sol.objective) / 1e-6
        assert d == pytest.approx(sol.duals[i], abs=1e-5)


def test_infeasible_and_unbounded():
    inf = LinearProgram(np.array([1.0]), np.array([[1.0], [1.0]]), np.array([GE, LE]), np.array([2.0, 1.0]))
    assert solve_lp(inf).status is LpStatus.INFEASIBLE
    unb = LinearProgram(np.array([-1.0]), np.array([[1.0]]), np.array([GE]), np.array([0.0]))
    assert solve_lp(unb).status is LpStatus.UNBOUNDED
    for lp in (inf, unb):
        assert solve_lp(lp, backend="highs").status is solve_lp(lp).status


def test_maximize_and_warm_start():
    A = np.array([[1.0, 2.0], [3.0, 1.0]])
    lp = LinearProgram(np.array([1.0, 1.0]), A, np.full(2, LE), np.array([4.0, 6.0]), maximize=True)
    sol = solve_lp(lp)
    assert sol.objective == pytest.approx(2.8)
    again = solve_lp(lp, warm_basis=sol.basis)
    assert again.objective == pytest.approx(2.8)
    assert again.iterations <= sol.iterations


def test_bland_rule_option():
    rng = np.random.default_rng(2)
    A = rng.uniform(0, 1, (5, 6))
    lp = LinearProgram(-np.ones(6), A, np.full(5, LE), np.ones(5), np.zeros(6), np.full(6, np.inf))
    a = solve_lp(lp)
    b = solve_lp(lp, options=SimplexOptions(bland=True))
    assert a.objective == pytest.approx(b.objective, abs=1e-9)


def test_lp_text_dump():
    lp = LinearProgram(np.array([1.0, -2.0]), np.array([[1.0, 1.0]]), np.array([LE]), np.array([4.0]),
                       np.zeros(2), np.array([3.0, np.inf]), names=["a", "b"])
    text = lp_to_text(lp)
    assert "a" in text and "b" in text and "4" in text
    assert text == lp_to_text(lp)
