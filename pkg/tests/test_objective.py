import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prescript.data import dataset_from_arrays
from prescript.objective import (PenaltyConfig, bias_penalty, estimate_noise_variance, negative_revenue_cost,
                                 objective_batch, objective_triplets, outcome_cost, penalized_objective,
                                 predicted_cost, squared_error_cost, variance_penalty)
from prescript.trees import TreeParams, WeightVector


def test_predicted_cost_examples():
    ds = dataset_from_arrays(None, [[0.0], [0.0]], [0.0, 2.0])
    assert predicted_cost([0.5, 0.5], squared_error_cost(), [1.0], ds) == pytest.approx(1.0)
    ds3 = dataset_from_arrays(None, [[0.0]] * 3, [4.0, 1.0, 2.0])
    assert predicted_cost([1.0, 0.0, 0.0], squared_error_cost(), [2.5], ds3) == pytest.approx(2.25)


def test_predicted_cost_negative_revenue_is_linear():
    rng = np.random.default_rng(0)
    Y = rng.uniform(0, 10, (4, 3))
    ds = dataset_from_arrays(None, rng.uniform(size=(4, 3)), Y)
    z = np.array([1.0, 2.0, 3.0])
    assert predicted_cost(np.full(4, 0.25), negative_revenue_cost(), z, ds) == pytest.approx(-z @ Y.mean(axis=0))


def test_variance_penalty_examples():
    assert variance_penalty(np.full(4, 0.25), 1.0) == pytest.approx(0.25)
    assert variance_penalty([1.0, 0.0], 3.0) == pytest.approx(3.0)


def test_bias_penalty_examples():
    ds = dataset_from_arrays(None, [[2.0]], [0.0])
    assert bias_penalty([1.0], [0.0], ds) == pytest.approx(2.0)
    assert bias_penalty([1.0], [2.0], ds) == 0.0
    ds2 = dataset_from_arrays(None, [[1.0], [3.0]], [0.0, 0.0])
    assert bias_penalty([0.25, 0.75], [0.0], ds2) == pytest.approx(2.5)


def test_penalized_objective_examples():
    ds = dataset_from_arrays(None, [[0.0], [4.0]], [1.0, 1.0])
    w = WeightVector.from_dense([0.5, 0.5])
    value, dec = penalized_objective(w, [2.0], outcome_cost(), ds, PenaltyConfig())
    assert value == pytest.approx(predicted_cost(w, outcome_cost(), [2.0], ds))
    # mean 1, V = sigma2 * 0.5 = 0.25, B = 2
    value, dec = penalized_objective(w, [2.0], outcome_cost(), ds, PenaltyConfig(2.0, 0.5, 0.5))
    assert (dec.mean_term, dec.sqrt_variance, dec.bias) == pytest.approx((1.0, 0.5, 2.0))
    assert value == pytest.approx(3.0)
    neg = dataset_from_arrays(None, [[0.0], [0.0]], [-3.0, -3.0])
    value, _ = penalized_objective(w, [0.0], None, neg, PenaltyConfig(mode="squared_mean"))
    assert value == pytest.approx(9.0)


def test_penalty_config_rejects_negative():
    with pytest.raises(ValueError):
        PenaltyConfig(lambda1=-1.0)
    with pytest.raises(ValueError):
        PenaltyConfig(mode="other")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["plain", "squared_mean"]),
       st.floats(0, 5), st.floats(0, 5))
def test_batch_forms_agree_with_scalar(seed, mode, l1, l2):
    rng = np.random.default_rng(seed)
    n, m = 12, 5
    ds = dataset_from_arrays(rng.normal(size=(n, 2)), rng.uniform(size=(n, 1)), rng.normal(size=n))
    W = rng.dirichlet(np.ones(n), size=m) * (rng.uniform(size=(m, n)) < 0.6)
    W[:, 0] += 1e-3
    W /= W.sum(axis=1, keepdims=True)
    Q = rng.normal(size=(m, 3))
    cfg = PenaltyConfig(l1, l2, 1.7, mode)
    cost = squared_error_cost()
    scalar = np.array([penalized_objective(W[k], Q[k], cost, ds, cfg)[0] for k in range(m)])
    np.testing.assert_allclose(objective_batch(W, Q, cost, ds, cfg)[0], scalar, rtol=1e-9, atol=1e-9)
    rows, cols = np.nonzero(W)
    # split each entry in two so that repeated (row, col) pairs are exercised
    r2, c2 = np.concatenate([rows, rows]), np.concatenate([cols, cols])
    v2 = np.concatenate([W[rows, cols] * 0.3, W[rows, cols] * 0.7])
    np.testing.assert_allclose(objective_triplets(r2, c2, v2, Q, cost, ds, cfg)[0], scalar, rtol=1e-9, atol=1e-9)


def test_noise_variance_exact_and_constant():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 2))
    Z = rng.normal(size=(50, 1))
    ds = dataset_from_arrays(X, Z, X @ [1.0, -2.0] + 3.0 * Z[:, 0])
    sigma2, flags = estimate_noise_variance(ds, "ols")
    assert sigma2 == pytest.approx(0.0, abs=1e-10)
    const = dataset_from_arrays(X, Z, np.full(50, 4.0))
    assert estimate_noise_variance(const, "forest", min_leaf=5)[0] == pytest.approx(0.0, abs=1e-20)


def test_noise_variance_forest_range():
    # known noise variance 4; the interval was established over seeds 0..19
    rng = np.random.default_rng(42)
    n = 2000
    X = rng.uniform(-1, 1, (n, 2))
    Z = rng.uniform(0, 1, (n, 1))
    mu = 3 * X[:, 0] + np.sin(4 * Z[:, 0]) + X[:, 1] ** 2
    ds = dataset_from_arrays(X, Z, mu + rng.normal(0, 2.0, n))
    sigma2, _ = estimate_noise_variance(ds, "forest", min_leaf=10)
    assert 2.5 <= sigma2 <= 6.0
