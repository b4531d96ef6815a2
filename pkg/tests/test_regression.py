import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import svr_dual_projected_gradient
from proxyvqa.errors import ValidationError
from proxyvqa.regression import (content_folds, grid_search_cv, predict, ridge_fit, svr_fit,
                                 svr_kkt_residual)


def standardize(X):
    sd = X.std(axis=0)
    sd[sd == 0] = 1
    return (X - X.mean(axis=0)) / sd


def naive_kernel(Xs, gamma):
    n = len(Xs)
    return np.array([[np.exp(-gamma * np.sum((Xs[i] - Xs[j]) ** 2)) for j in range(n)] for i in range(n)])


def test_ridge_matches_normal_equation_oracle(rng):
    for _ in range(10):
        n, d = int(rng.integers(5, 40)), int(rng.integers(1, 8))
        X = rng.normal(size=(n, d)) * rng.uniform(0.1, 10, size=d) + rng.normal(size=d)
        y = rng.normal(size=n)
        lam = float(rng.uniform(0.01, 10))
        A = np.hstack([standardize(X), np.ones((n, 1))])
        P = lam * np.eye(d + 1)
        P[-1, -1] = 0
        w = np.linalg.solve(A.T @ A + P, A.T @ y)
        np.testing.assert_allclose(ridge_fit(X, y, lam).predict(X), A @ w, atol=1e-8)


def test_ridge_recovers_planted_weights(rng):
    X = rng.normal(size=(60, 4))
    w0 = np.array([1.5, -2.0, 0.3, 0.0])
    m = ridge_fit(X, X @ w0 + 0.7, lam=1e-8)
    np.testing.assert_allclose(m.coef, w0, atol=1e-6)


def test_ridge_large_lambda_predicts_mean(rng):
    X, y = rng.normal(size=(20, 3)), rng.normal(size=20)
    m = ridge_fit(X, y, lam=1e12)
    assert np.max(np.abs(m.weights)) < 1e-9
    np.testing.assert_allclose(m.predict(X), y.mean(), atol=1e-9)


def test_ridge_objective_gradient_vanishes(rng):
    X, y = rng.normal(size=(30, 5)), rng.normal(size=30)
    m = ridge_fit(X, y, lam=2.0)
    Xs = standardize(X)
    r = Xs @ m.weights + m.intercept - y
    assert np.linalg.norm(2 * Xs.T @ r + 2 * 2.0 * m.weights) <= 1e-8
    assert abs(r.sum()) <= 1e-8


def test_ridge_constant_labels_flagged(rng):
    m = ridge_fit(rng.normal(size=(6, 2)), np.full(6, 3.0))
    assert m.degenerate
    np.testing.assert_array_equal(m.predict(rng.normal(size=(2, 2))), [3.0, 3.0])


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 100), st.integers(0, 2 ** 16))
def test_predictions_invariant_to_feature_scale(c, seed):
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(15, 3)), rng.normal(size=15)
    np.testing.assert_allclose(ridge_fit(X * c, y).predict(X * c), ridge_fit(X, y).predict(X), atol=1e-8)
    # at the default tolerance the solver path may differ by rounding; compare optima
    a = svr_fit(X * c, y, C=1.0, gamma=0.5, tol=1e-12).predict(X * c)
    b = svr_fit(X, y, C=1.0, gamma=0.5, tol=1e-12).predict(X)
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_svr_dual_objective_matches_slow_oracle(rng):
    for trial in range(12):
        n = int(rng.integers(3, 11))
        d = 1 if trial < 4 else int(rng.integers(1, 4))
        X = rng.normal(size=(n, d))
        y = np.sin(X[:, 0] * 2) + 0.1 * rng.normal(size=n)
        C = float(rng.choice([0.1, 1.0, 10.0]))
        gamma, eps = float(rng.uniform(0.2, 2)), float(rng.uniform(0, 0.2))
        m = svr_fit(X, y, C=C, gamma=gamma, epsilon=eps)
        _, oracle = svr_dual_projected_gradient(naive_kernel(standardize(X), gamma), y, C, eps)
        assert abs(m.dual_objective - oracle) <= 1e-3, (trial, m.dual_objective, oracle)
        assert m.converged and m.kkt_residual <= 1e-3
        assert np.all(np.abs(m.dual_coef) <= C)
        assert abs(m.dual_coef.sum()) < 1e-9


def test_svr_kkt_on_larger_problem(rng):
    X = rng.normal(size=(80, 6))
    y = X[:, 0] - X[:, 1] ** 2 + 0.1 * rng.normal(size=80)
    m = svr_fit(X, y, C=10.0)
    assert m.converged and m.kkt_residual <= 1e-3
    assert np.all(np.abs(m.dual_coef) <= 10.0)


def test_svr_single_label_value(rng):
    m = svr_fit(rng.normal(size=(5, 2)), np.full(5, 2.5))
    assert m.dual_coef.size == 0 and m.bias == 2.5


def test_svr_wide_tube_is_constant(rng):
    X, y = rng.normal(size=(8, 2)), rng.uniform(1, 2, size=8)
    m = svr_fit(X, y, epsilon=5.0)
    assert m.dual_coef.size == 0
    assert m.bias == pytest.approx((y.max() + y.min()) / 2)


def test_kkt_residual_detects_violation():
    K = np.eye(2)
    y = np.array([1.0, -1.0])
    assert svr_kkt_residual(K, y, np.zeros(2), 0.0, 1.0, 0.1) == pytest.approx(0.9)


def test_content_folds_are_disjoint_and_deterministic():
    cids = np.repeat(np.arange(12), 5)
    folds, k = content_folds(cids, 5, seed=3)
    assert k == 5
    for f in range(k):
        assert not set(cids[folds == f]) & set(cids[folds != f])
    np.testing.assert_array_equal(folds, content_folds(cids, 5, seed=3)[0])
    _, k2 = content_folds(np.arange(3), 5)
    assert k2 == 3


def planted(rng, n_contents=10, per=5, d=4):
    X = rng.normal(size=(n_contents * per, d))
    return X, X @ np.array([1.0, -0.5, 0.25, 0.0]), np.repeat(np.arange(n_contents), per)


def test_grid_search_single_cell_equals_direct_fit(rng):
    X, y, cids = planted(rng)
    res = grid_search_cv(X, y, cids, C_grid=(1.0,), gamma_grid=(0.1,), epsilon=0.05)
    direct = svr_fit(X, y, 1.0, 0.1, 0.05)
    assert (res.C, res.gamma) == (1.0, 0.1)
    np.testing.assert_array_equal(res.model.predict(X), direct.predict(X))


def test_grid_search_planted_problem(rng):
    X, y, cids = planted(rng)
    res = grid_search_cv(X, y, cids)
    assert max(s for _, _, s in res.scores) >= 0.95
    assert dict(((c, g), s) for c, g, s in res.scores)[(res.C, res.gamma)] >= 0.95


def test_grid_search_reduces_folds_for_few_contents(rng):
    X, y, _ = planted(rng, n_contents=3, per=6)
    res = grid_search_cv(X, y, np.repeat(np.arange(3), 6), C_grid=(1.0,), gamma_grid=(0.1,))
    assert res.n_folds == 3 and res.reduced_folds


def test_input_validation(rng):
    with pytest.raises(ValidationError):
        ridge_fit(rng.normal(size=(3, 2)), np.ones(4))
    with pytest.raises(ValidationError):
        ridge_fit(rng.normal(size=(3, 2)), np.ones(3), lam=0)
    with pytest.raises(ValidationError):
        svr_fit(rng.normal(size=(3, 2)), np.ones(3), C=-1)
    X = rng.normal(size=(3, 2))
    X[0, 0] = np.nan
    with pytest.raises(ValidationError):
        svr_fit(X, np.arange(3.0))
    m = ridge_fit(rng.normal(size=(5, 2)), rng.normal(size=5))
    assert np.all(np.isfinite(predict(m, rng.normal(size=(4, 2)))))
