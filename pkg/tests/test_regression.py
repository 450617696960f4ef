import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from erd3ro.core import Dataset
from erd3ro.regression import (EmptyNeighborhoodError, OLSModel, RankDeficientError, ReluNetModel,
                               TrainingConfig, fit_kernel, fit_ols, fit_relu_nn, load_model, loss_and_grad,
                               residuals)


def affine_data(rng, n, d_x=3, d_y=2, noise=0.0):
    X = rng.gamma(2, 3, (n, d_x))
    Z = rng.uniform(0, 500, (n, 1))
    coef = rng.normal(size=(d_y, d_x + 1))
    icpt = rng.normal(size=d_y) * 100
    Y = np.hstack([X, Z]) @ coef.T + icpt + noise * rng.standard_normal((n, d_y))
    return Dataset(X, Z, Y), coef, icpt


def fd_grad_check(params, U, T, h=1e-5):
    _, grads = loss_and_grad(params, U, T)
    worst = 0.0
    for p, g in zip(params, grads):
        flat, gf = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp, _ = loss_and_grad(params, U, T)
            flat[i] = old - h
            lm, _ = loss_and_grad(params, U, T)
            flat[i] = old
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - gf[i]) / max(1e-8, abs(fd), abs(gf[i])))
    return worst


def test_ols_recovers_noiseless_generator():
    rng = np.random.default_rng(0)
    data, coef, icpt = affine_data(rng, 40)
    m = fit_ols(data)
    np.testing.assert_allclose(m.coef, coef, atol=1e-8)
    np.testing.assert_allclose(m.intercept, icpt, atol=1e-8)
    np.testing.assert_allclose(residuals(m, data).residuals, 0.0, atol=1e-8)


def test_ols_saturated_fit_interpolates():
    rng = np.random.default_rng(1)
    X, Z = rng.normal(size=(5, 3)), rng.normal(size=(5, 1))
    data = Dataset(X, Z, rng.normal(size=(5, 2)))
    np.testing.assert_allclose(residuals(fit_ols(data), data).residuals, 0.0, atol=1e-9)


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(2)
    data, _, _ = affine_data(rng, 50, noise=5.0)
    D = np.hstack([data.X, data.Z, np.ones((50, 1))])
    beta = np.linalg.solve(D.T @ D, D.T @ data.Y)
    m = fit_ols(data)
    np.testing.assert_allclose(m.coef, beta[:-1].T, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(m.intercept, beta[-1], rtol=1e-8, atol=1e-8)


def test_ols_rank_deficiency_names_columns():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(10, 2))
    X = np.hstack([X, X[:, :1]])
    with pytest.raises(RankDeficientError):
        fit_ols(Dataset(X, rng.normal(size=(10, 1)), rng.normal(size=(10, 1))))
    with pytest.raises(RankDeficientError):
        fit_ols(Dataset(X[:2], np.ones((2, 1)), np.ones((2, 1))))


def test_ols_intercept_only_prediction():
    m = OLSModel(np.zeros((2, 4)), [7.0, -1.0], 3, 1)
    np.testing.assert_array_equal(m.predict([1, 2, 3], [4]), [7.0, -1.0])


def test_kernel_one_and_two_neighbours():
    X = np.array([[0.0], [1.0], [50.0]])
    Z = np.zeros((3, 1))
    Y = np.array([[0.0], [2.0], [9.0]])
    m = fit_kernel(Dataset(X, Z, Y), bandwidth=8.0)
    assert m.predict([55.0], [0.0])[0] == pytest.approx(9.0)
    assert m.predict([0.5], [0.0])[0] == pytest.approx(1.0)
    with pytest.raises(EmptyNeighborhoodError):
        m.predict([25.0], [0.0])


def test_kernel_large_bandwidth_gives_global_mean_residuals():
    rng = np.random.default_rng(4)
    data, _, _ = affine_data(rng, 20)
    m = fit_kernel(data, bandwidth=1e6)
    np.testing.assert_allclose(residuals(m, data).residuals, data.Y - data.Y.mean(axis=0), atol=1e-9)


def test_nn_constant_target():
    rng = np.random.default_rng(5)
    X, Z = rng.gamma(2, 3, (30, 2)), rng.uniform(0, 500, (30, 1))
    data = Dataset(X, Z, np.full((30, 1), 42.0))
    m = fit_relu_nn(data, 16, TrainingConfig(seed=1))
    np.testing.assert_allclose(m.predict_many(X, Z), 42.0, atol=1e-2)


def test_nn_dead_network_is_constant():
    m = ReluNetModel(np.zeros((16, 4)), np.zeros(16), np.zeros((2, 16)), [3.0, -4.0], 3, 1)
    np.testing.assert_array_equal(m.predict([1, 2, 3], [400]), [3.0, -4.0])


@pytest.mark.parametrize("seed", range(3))
def test_nn_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    U, T = rng.normal(size=(12, 4)), rng.normal(size=(12, 2))
    params = [rng.normal(size=(16, 4)), rng.normal(size=16), rng.normal(size=(2, 16)), rng.normal(size=2)]
    assert fd_grad_check(params, U, T) < 1e-4


def test_nn_training_is_seeded():
    rng = np.random.default_rng(6)
    data, _, _ = affine_data(rng, 20)
    a = fit_relu_nn(data, 8, TrainingConfig(epochs=50, seed=3))
    b = fit_relu_nn(data, 8, TrainingConfig(epochs=50, seed=3))
    np.testing.assert_array_equal(a.V1, b.V1)
    assert a.history[-1] < a.history[0]


def test_residuals_are_deterministic():
    rng = np.random.default_rng(7)
    data, _, _ = affine_data(rng, 15, noise=1.0)
    for m in (fit_ols(data), fit_kernel(data, 300.0), fit_relu_nn(data, 4, TrainingConfig(epochs=20))):
        a, b = residuals(m, data).residuals, residuals(m, data).residuals
        assert a.tobytes() == b.tobytes()


def _grid_check(model, x, lo=0.0, hi=500.0, tol=1e-9):
    emb = model.embed(x, (lo, hi))
    zs = np.linspace(lo, hi, 1000)
    for z in zs:
        try:
            ref = model.predict(x, [z])
        except EmptyNeighborhoodError:
            with pytest.raises(EmptyNeighborhoodError):
                emb.evaluate(z)
            continue
        np.testing.assert_allclose(emb.evaluate(z), ref, atol=tol * (1 + np.abs(ref).max()), rtol=0)
    return emb


def test_ols_embedding_single_piece():
    rng = np.random.default_rng(8)
    data, _, _ = affine_data(rng, 20, noise=1.0)
    m = fit_ols(data)
    emb = m.embed(data.X[0], (0, 500))
    assert emb.n_pieces == 1
    for z in rng.uniform(0, 500, 5):
        np.testing.assert_allclose(emb.evaluate(z), m.predict(data.X[0], [z]), atol=1e-10)


def test_kernel_embedding_three_points():
    rng = np.random.default_rng(9)
    X = np.zeros((3, 1))
    Z = rng.uniform(100, 400, (3, 1))
    data = Dataset(X, Z, rng.normal(size=(3, 2)))
    m = fit_kernel(data, bandwidth=60.0)
    emb = _grid_check(m, [0.0], tol=0.0)
    assert emb.breakpoints.size - 2 <= 6
    assert emb.is_piecewise_constant()


def test_relu_embedding_on_grid():
    rng = np.random.default_rng(10)
    data, _, _ = affine_data(rng, 30, noise=1.0)
    m = fit_relu_nn(data, 16, TrainingConfig(epochs=200))
    emb = _grid_check(m, data.X[0])
    assert emb.n_pieces <= 17


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(5.0, 80.0))
def test_kernel_embedding_property(seed, h):
    rng = np.random.default_rng(seed)
    data = Dataset(rng.gamma(2, 3, (8, 2)), rng.uniform(0, 500, (8, 1)), rng.normal(size=(8, 1)))
    _grid_check(fit_kernel(data, h), data.X[0], tol=1e-12)


def test_decision_independent_fit_ignores_price():
    rng = np.random.default_rng(11)
    data, _, _ = affine_data(rng, 30, noise=1.0)
    for m in (fit_ols(data, False), fit_kernel(data, 20.0, False)):
        x = data.X[0]
        np.testing.assert_array_equal(m.predict(x, [0.0]), m.predict(x, [500.0]))
        emb = m.embed(x, (0, 500))
        assert emb.n_pieces == 1 and not np.any(emb.slopes)


def test_model_save_load(tmp_path):
    rng = np.random.default_rng(12)
    data, _, _ = affine_data(rng, 20, noise=1.0)
    for m in (fit_ols(data), fit_kernel(data, 300.0), fit_relu_nn(data, 4, TrainingConfig(epochs=20))):
        m.save(tmp_path / "m.json")
        m2 = load_model(tmp_path / "m.json")
        assert m2.kind == m.kind
        np.testing.assert_array_equal(m2.predict_many(data.X, data.Z), m.predict_many(data.X, data.Z))
