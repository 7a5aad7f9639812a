import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.linear_model import Lasso

from prescript.data import dataset_from_arrays
from prescript.linear import (LinearModel, SingularDesignError, fit_lasso_approx, fit_ols, fit_ridge,
                              lasso_coordinate_descent, linear_objective, soft_threshold)


def regression_data(n=200, d=4, seed=0, noise=0.5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    Z = rng.normal(size=(n, 1))
    y = 2.0 * X[:, 0] - 1.0 * Z[:, 0] + rng.normal(0, noise, n)
    return dataset_from_arrays(X, Z, y)


def test_ols_orthonormal_design():
    ds = dataset_from_arrays([[1.0], [0.0]], [[0.0], [1.0]], [0.0, 1.0])
    model = fit_ols(ds)
    np.testing.assert_allclose(model.coef, [0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(model.M, np.eye(2), atol=1e-12)


def test_ols_exact_fit():
    ds = dataset_from_arrays(None, [0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    model = fit_ols(ds)
    assert model.coef[0] == pytest.approx(1.0)
    assert model.sigma == pytest.approx(0.0, abs=1e-12)


def test_ols_duplicate_column_is_singular():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10, 1))
    ds = dataset_from_arrays(np.hstack([x, x]), rng.normal(size=(10, 1)), rng.normal(size=10))
    with pytest.raises(SingularDesignError):
        fit_ols(ds)


def test_ridge_zero_is_ols():
    ds = regression_data()
    np.testing.assert_allclose(fit_ridge(ds, 0.0).coef, fit_ols(ds).coef, atol=1e-10)


def test_ridge_matches_closed_form_and_shrinks():
    ds = regression_data(seed=3)
    A, y = ds.features, ds.outcomes[:, 0]
    norms = []
    for alpha in (0.1, 1.0, 10.0, 100.0):
        model = fit_ridge(ds, alpha)
        expected = np.linalg.lstsq(np.vstack([A, math.sqrt(alpha) * np.eye(A.shape[1])]),
                                   np.concatenate([y, np.zeros(A.shape[1])]), rcond=None)[0]
        np.testing.assert_allclose(model.coef, expected, atol=1e-10)
        norms.append(np.linalg.norm(model.coef))
    assert all(b <= a for a, b in zip(norms, norms[1:]))


def test_ridge_rank_deficient_is_finite():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10, 1))
    ds = dataset_from_arrays(np.hstack([x, x]), rng.normal(size=(10, 1)), rng.normal(size=10))
    assert np.all(np.isfinite(fit_ridge(ds, 1.0).coef))


def test_lasso_matches_independent_solver():
    ds = regression_data(seed=5)
    A, y = ds.features, ds.outcomes[:, 0]
    alpha = 20.0
    coef, _, converged = lasso_coordinate_descent(A, y, alpha)
    assert converged
    # the reference minimizes (1/2n)||y - Ab||^2 + (alpha/n)||b||_1, the same problem rescaled
    ref = Lasso(alpha=alpha / ds.n, fit_intercept=False, tol=1e-12, max_iter=100_000).fit(A, y).coef_
    np.testing.assert_allclose(coef, ref, atol=1e-6)


def test_lasso_active_set_finds_relevant_feature():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 5))
    Z = rng.normal(size=(200, 1))
    y = 3.0 * X[:, 2] + rng.normal(0, 0.5, 200)
    model = fit_lasso_approx(dataset_from_arrays(X, Z, y), 20.0)
    assert model.active[2]
    assert model.active.sum() <= 3


def test_lasso_huge_alpha_empties_active_set():
    model = fit_lasso_approx(regression_data(), 1e9)
    assert model.flags["empty_active_set"]
    assert not model.coef.any()


def test_lasso_small_alpha_approaches_ols():
    ds = regression_data(seed=2)
    np.testing.assert_allclose(fit_lasso_approx(ds, 1e-6).coef, fit_ols(ds).coef, atol=1e-3)


def test_lasso_approximation_consistent_on_training_points():
    ds = regression_data(seed=4)
    model = fit_lasso_approx(ds, 5.0)
    A = ds.features
    approx = model.M @ A.T @ ds.outcomes[:, 0]
    np.testing.assert_allclose(A @ approx, A @ model.coef, atol=1e-3)


def test_linear_objective_examples():
    model = LinearModel("ols", np.zeros(2), np.eye(2), 1.0)
    assert linear_objective(model, [3.0], [4.0], 1.0) == pytest.approx(5.0)
    model = LinearModel("ols", np.array([1.0, 2.0]), np.eye(2), 1.0)
    assert linear_objective(model, [1.0], [1.0], 0.0) == pytest.approx(3.0)
    assert linear_objective(model, [1.0], [1.0], 0.0, mode="squared_mean") == pytest.approx(9.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 10), st.floats(-5, 5), st.floats(-5, 5))
def test_objective_linear_in_lambda1(lam, x, z):
    model = LinearModel("ols", np.array([0.3, -0.7]), np.array([[2.0, 0.5], [0.5, 1.0]]), 1.5)
    v = np.array([x, z])
    step = model.sigma * math.sqrt(v @ model.M @ v)
    diff = linear_objective(model, [x], [z], 2 * lam) - linear_objective(model, [x], [z], lam)
    assert diff == pytest.approx(lam * step, abs=1e-9)


def test_soft_threshold():
    np.testing.assert_array_equal(soft_threshold(np.array([-3.0, 0.5, 2.0]), 1.0), [-2.0, 0.0, 1.0])


def test_round_trip():
    model = fit_lasso_approx(regression_data(), 5.0)
    back = LinearModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(back.coef, model.coef)
    np.testing.assert_array_equal(back.active, model.active)
