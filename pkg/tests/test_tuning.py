import numpy as np
import pytest

from prescript.data import DecisionSpace, dataset_from_arrays
from prescript.linear import LinearModel
from prescript.objective import PenaltyConfig, outcome_cost
from prescript.trees import TreeParams, fit_honest_cart
from prescript.tuning import CandidateModel, impute_counterfactuals, penalty_grid, scoring_targets, select_model

UNIT = DecisionSpace.box([0.0], [1.0])


def test_imputer_recovers_identity_response():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(600, 1))
    Z = rng.uniform(0, 5, (600, 1))
    imp = impute_counterfactuals(dataset_from_arrays(X, Z, Z[:, 0]), seed=0)
    zq = np.linspace(0.5, 4.5, 9).reshape(-1, 1)
    xq = rng.normal(size=(9, 1))
    np.testing.assert_allclose(imp.predict(xq, zq), zq[:, 0], atol=0.2)


def test_imputer_constant_outcome():
    rng = np.random.default_rng(1)
    ds = dataset_from_arrays(rng.normal(size=(100, 2)), rng.uniform(size=(100, 1)), np.full(100, 7.0))
    imp = impute_counterfactuals(ds, seed=1)
    np.testing.assert_allclose(imp.predict(rng.normal(size=(20, 2)), rng.uniform(size=(20, 1))), 7.0)


def test_imputer_training_error_small_for_deep_forest():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 2))
    Z = rng.uniform(size=(300, 1))
    y = X[:, 0] + np.sin(6 * Z[:, 0]) + rng.normal(0, 0.1, 300)
    imp = impute_counterfactuals(dataset_from_arrays(X, Z, y), params=TreeParams(min_leaf=1), seed=2)
    resid = imp.predict(X, Z) - y
    assert np.sqrt(np.mean(resid ** 2)) < 0.35 * y.std()


def test_imputer_squared_mean_mode():
    rng = np.random.default_rng(3)
    ds = dataset_from_arrays(rng.normal(size=(80, 1)), rng.uniform(size=(80, 1)), np.full(80, -3.0))
    imp = impute_counterfactuals(ds, mode="squared_mean", seed=3)
    np.testing.assert_allclose(imp.cost(np.zeros((2, 1)), np.zeros((2, 1))), 9.0)


def linear_candidate(coef, train):
    model = LinearModel("ols", np.asarray(coef, float), np.eye(2), 1.0)
    return CandidateModel(f"lin{coef}", model, PenaltyConfig(), train, outcome_cost(), UNIT, train.outcomes[:, 0])


def noiseless_linear(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (n, 1))
    Z = rng.uniform(0, 1, (n, 1))
    return dataset_from_arrays(X, Z, 2 * X[:, 0] - Z[:, 0])


def test_select_single_candidate():
    train, val = noiseless_linear(50, 0), noiseless_linear(50, 1)
    cand = linear_candidate([0.0, 0.0], train)
    sel = select_model([cand], val, impute_counterfactuals(val, outcome_cost(), seed=0))
    assert sel.best is cand and sel.index == 0


def test_select_prefers_data_generating_model():
    train, val = noiseless_linear(100, 0), noiseless_linear(300, 1)
    imputer = impute_counterfactuals(val, outcome_cost(), seed=0)
    wrong = linear_candidate([2.0, 1.0], train)
    truth = linear_candidate([2.0, -1.0], train)
    sel = select_model([wrong, truth], val, imputer)
    assert sel.index == 1
    assert sel.mse[1] == pytest.approx(0.0, abs=1e-20)
    assert sel.imputed_cost[1] < sel.imputed_cost[0]


def test_select_rejects_degenerate_penalty():
    rng = np.random.default_rng(4)
    n = 900
    X = rng.uniform(0, 1, (n, 1))
    Z = rng.uniform(0, 1, (n, 1))
    y = 4 * (Z[:, 0] - X[:, 0]) ** 2 + rng.normal(0, 0.05, n)
    train = dataset_from_arrays(X[:600], Z[:600], y[:600])
    val = dataset_from_arrays(X[600:], Z[600:], y[600:])
    tree = fit_honest_cart(train, "outcome", TreeParams(min_leaf=10), seed=0)
    targets = scoring_targets(train, outcome_cost(), "plain")
    base = CandidateModel("cart", tree, PenaltyConfig(0, 0, 0.01), train, outcome_cost(), UNIT, targets)
    # a huge weight on the variance term sends every prescription to the largest leaf
    extreme = base.with_penalty(PenaltyConfig(1e6, 0, 0.01))
    sel = select_model([extreme, base], val, impute_counterfactuals(val, outcome_cost(), seed=0))
    assert sel.index == 1
    assert sel.imputed_cost[0] > 2 * sel.imputed_cost[1]


def test_select_ties_go_first():
    train, val = noiseless_linear(50, 0), noiseless_linear(50, 1)
    a = linear_candidate([1.0, 1.0], train)
    b = linear_candidate([1.0, 1.0], train)
    assert select_model([a, b], val, impute_counterfactuals(val, outcome_cost(), seed=0)).index == 0
    with pytest.raises(ValueError):
        select_model([], val, None)


def test_penalty_grid_order():
    grid = penalty_grid([0, 1], [0, 5, 10], 2.0)
    assert [(c.lambda1, c.lambda2) for c in grid] == [(0, 0), (0, 5), (0, 10), (1, 0), (1, 5), (1, 10)]
    assert all(c.sigma2 == 2.0 for c in grid)
