import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from erd3ro.core import (AffineMapInZ, Dataset, InstanceError, RiskSpec, SupportSet, augment_cvar,
                         evaluate_affine, project)
from erd3ro.oracles import ExtensiveForm
from erd3ro.pricing import generate_instance
from erd3ro.recourse import solve_recourse

from toys import identity_recourse

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_affine_identity_and_constant():
    m = AffineMapInZ(np.zeros((2, 2)), np.eye(2)[None])
    np.testing.assert_array_equal(evaluate_affine(m, [3.0]), 3 * np.eye(2))
    c = AffineMapInZ(np.arange(4.0).reshape(2, 2), np.zeros((3, 2, 2)))
    assert c.is_constant()
    for z in ([0, 0, 0], [1, -2, 5]):
        np.testing.assert_array_equal(c(z), c.constant)


def test_affine_hand_expansion():
    rng = np.random.default_rng(1)
    K, T1, T2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    m = AffineMapInZ(K, np.stack([T1, T2]))
    got = m([1.0, 2.0])
    for i in range(2):
        for j in range(2):
            assert got[i, j] == pytest.approx(K[i, j] + 1.0 * T1[i, j] + 2.0 * T2[i, j], abs=1e-14)


def test_affine_rejects_bad_shapes():
    with pytest.raises(InstanceError):
        AffineMapInZ(np.zeros((2, 2)), np.zeros((1, 3, 2)))
    with pytest.raises(ValueError):
        AffineMapInZ(np.zeros(2), np.zeros((2, 2)))([1.0])


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 2, 2), elements=finite), arrays(float, 3, elements=finite),
       arrays(float, 3, elements=finite), st.floats(0, 1))
def test_affine_is_affine(coeffs, z1, z2, a):
    m = AffineMapInZ(np.ones((2, 2)), coeffs)
    lhs = m(a * z1 + (1 - a) * z2)
    rhs = a * m(z1) + (1 - a) * m(z2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-6 * (1 + np.abs(rhs).max()))


def test_projection_examples():
    np.testing.assert_array_equal(project(SupportSet("nonnegative_orthant"), [-1, 2]), [0, 2])
    y = np.array([-3.5, 7.0])
    np.testing.assert_array_equal(project(SupportSet(), y), y)
    np.testing.assert_array_equal(project(SupportSet("box", (0, 0), (1, 1)), [0.5, 3]), [0.5, 1])
    with pytest.raises(ValueError):
        SupportSet("box", (1.0,), (0.0,))


@given(arrays(float, 3, elements=finite))
def test_projection_idempotent_and_inside(y):
    for s in (SupportSet(), SupportSet("nonnegative_orthant"), SupportSet("box", (-1, 0, 2), (1, 5, 3))):
        p = s.project(y)
        np.testing.assert_array_equal(s.project(p), p)
        if s.kind == "nonnegative_orthant":
            assert np.all(p >= 0)


def test_risk_spec_validation():
    with pytest.raises(ValueError):
        RiskSpec(-1.0, 0.5)
    with pytest.raises(ValueError):
        RiskSpec(1.0, 1.0)


def _cvar_objective(values, rho, theta):
    inst = augment_cvar(identity_recourse(), RiskSpec(rho, theta), (-100.0, 100.0))
    ext = ExtensiveForm(inst, np.array(values, float)[:, None], 0.0, include_lambda=False)
    return ext.value_lp(0.0, np.zeros(1))


def test_cvar_of_constant():
    assert _cvar_objective([5.0], 1.0, 0.9) == pytest.approx(10.0, abs=1e-9)


def test_cvar_two_point_enumeration():
    vals, theta, rho = np.array([0.0, 10.0]), 0.5, 1.0
    enum = min(e + np.mean(np.maximum(vals - e, 0)) / (1 - theta) for e in vals)
    assert enum == pytest.approx(10.0)
    total = vals.mean() + rho * enum
    assert total == pytest.approx(15.0)
    assert _cvar_objective(vals, rho, theta) == pytest.approx(total, abs=1e-9)


def test_cvar_rho_zero_leaves_recourse_unchanged():
    rng = np.random.default_rng(3)
    setup = generate_instance(rng, 2, 2, 2, rho=0.0)
    aug = augment_cvar(setup.base, RiskSpec(0.0, 0.9), (-1e7, 1e7))
    for _ in range(20):
        z = np.concatenate([[rng.uniform(0, 500)], rng.uniform(0, 3000, 2)])
        Y = rng.uniform(0, 2000, 2)
        eta = rng.uniform(-1e5, 1e5)
        h0 = solve_recourse(setup.base, z, Y).objective
        h1 = solve_recourse(aug, np.append(z, eta), Y).objective
        assert h1 == pytest.approx(h0, rel=1e-9, abs=1e-6)


def test_cvar_augment_twice_rejected():
    inst = augment_cvar(identity_recourse(), RiskSpec(1.0, 0.9))
    with pytest.raises(InstanceError):
        augment_cvar(inst, RiskSpec(1.0, 0.9))


def test_dataset_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    d = Dataset(rng.normal(size=(4, 2)), rng.normal(size=(4, 1)), rng.normal(size=(4, 3)))
    d.to_csv(tmp_path / "d.csv")
    e = Dataset.from_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(d.X, e.X)
    np.testing.assert_array_equal(d.Y, e.Y)
    assert d.fingerprint() == e.fingerprint()
    assert d.head(2).n == 2 and d.drop(1).n == 3


def test_instance_json_roundtrip(tmp_path):
    setup = generate_instance(np.random.default_rng(0), 2, 3, 3)
    setup.instance.save(tmp_path / "i.json")
    from erd3ro.core import TwoStageInstance
    inst = TwoStageInstance.load(tmp_path / "i.json")
    np.testing.assert_array_equal(inst.W, setup.instance.W)
    np.testing.assert_array_equal(inst.T.coeffs, setup.instance.T.coeffs)
    assert inst.cvar == setup.instance.cvar
