import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prescript.data import DecisionSpace, dataset_from_arrays
from prescript.experiments.pricing import generate_pricing_data, price_space
from prescript.linear import LinearModel
from prescript.objective import PenaltyConfig, negative_revenue_cost, outcome_cost, squared_error_cost
from prescript.optimize import (InfeasibleSpaceError, grid_oracle, optimize_forest, optimize_linear, optimize_tree,
                                prescribe, weight_objective)
from prescript.trees import ForestModel, TreeModel, TreeParams, fit_honest_cart, fit_honest_forest


def single_leaf(n_rows, n_features=1):
    return TreeModel([-1], [0.0], [-1], [-1], [0], [list(range(n_rows))], n_rows, n_features,
                     TreeParams(min_leaf=1))


def test_grid_oracle_examples():
    space = DecisionSpace.box([0.0], [4.0])
    res = grid_oracle(lambda Z: (Z[:, 0] - 1.0) ** 2, space, 5)
    assert res.z[0] == 1.0 and res.value == 0.0
    assert grid_oracle(lambda Z: Z[:, 0], DecisionSpace.box([0.0], [1.0]), 2).z[0] == 0.0
    tri = DecisionSpace([0, 0], [1, 1], A=[[1, 1]], b=[1])
    res = grid_oracle(lambda Z: -Z.sum(axis=1), tri, 3)
    np.testing.assert_array_equal(res.z, [0.0, 1.0])


def test_grid_oracle_guards():
    with pytest.raises(ValueError):
        grid_oracle(lambda Z: Z[:, 0], DecisionSpace.box([0.0] * 5, [1.0] * 5), 1000)
    empty = DecisionSpace([0.0], [1.0], A=[[1.0]], b=[-1.0])
    with pytest.raises(InfeasibleSpaceError):
        grid_oracle(lambda Z: Z[:, 0], empty, 11)


def test_tree_single_leaf_squared_error():
    ds = dataset_from_arrays(None, [[1.0], [3.0]], [1.0, 3.0])
    space = DecisionSpace.box([0.0], [4.0])
    res = optimize_tree(single_leaf(2), ds, None, squared_error_cost(), PenaltyConfig(), space)
    assert res.z[0] == pytest.approx(2.0, abs=1e-6)
    assert res.value == pytest.approx(1.0, abs=1e-9)


def test_tree_bias_plateau_keeps_midpoint():
    ds = dataset_from_arrays(None, [[1.0], [3.0]], [1.0, 3.0])
    space = DecisionSpace.box([0.0], [4.0])
    cfg = PenaltyConfig(0.0, 1.0)
    res = optimize_tree(single_leaf(2), ds, None, squared_error_cost(), cfg, space)
    oracle = grid_oracle(weight_objective(single_leaf(2), ds, None, squared_error_cost(), cfg), space, 4001)
    assert res.z[0] == pytest.approx(2.0, abs=1e-6)
    assert oracle.z[0] == pytest.approx(2.0, abs=1e-3)
    assert res.value <= oracle.value + 1e-9


def test_tree_picks_low_mean_leaf():
    # split at z = 2; left leaf holds rows {0, 1} with mean 5, right leaf rows {2, 3} with mean 1
    tree = TreeModel([0, -1, -1], [2.0, 0, 0], [1, -1, -1], [2, -1, -1], [-1, 0, 1],
                     [[0, 1], [2, 3]], 4, 1, TreeParams(min_leaf=2))
    ds = dataset_from_arrays(None, [[1.0], [1.5], [3.0], [3.5]], [4.0, 6.0, 0.0, 2.0])
    res = optimize_tree(tree, ds, None, outcome_cost(), PenaltyConfig(1.0, 0.0, 1.0),
                        DecisionSpace.box([0.0], [4.0]))
    assert res.z[0] > 2.0
    assert res.leaf_id == 1


def test_tree_respects_linear_constraint():
    rng = np.random.default_rng(0)
    Z = rng.uniform(0, 1, (300, 2))
    y = (Z[:, 0] - 0.8) ** 2 + (Z[:, 1] - 0.8) ** 2 + rng.normal(0, 0.01, 300)
    ds = dataset_from_arrays(None, Z, y)
    tree = fit_honest_cart(ds, "outcome", TreeParams(min_leaf=10), seed=0)
    space = DecisionSpace([0, 0], [1, 1], A=[[1, 1]], b=[1])
    res = optimize_tree(tree, ds, None, outcome_cost(), PenaltyConfig(0.0, 0.5, 0.01), space)
    assert space.contains(res.z, tol=1e-12)


def test_forest_single_leaf_matches_tree():
    ds = dataset_from_arrays(None, [[1.0], [3.0]], [1.0, 3.0])
    space = DecisionSpace.box([0.0], [4.0])
    cfg = PenaltyConfig(0.5, 0.0, 1.0)
    a = optimize_tree(single_leaf(2), ds, None, squared_error_cost(), cfg, space)
    b = optimize_forest(ForestModel([single_leaf(2)]), ds, None, squared_error_cost(), cfg, space)
    assert b.z[0] == pytest.approx(a.z[0], abs=4.0 / 100)
    assert b.value == pytest.approx(a.value, abs=1e-3)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_forest_separable_objective_matches_grid_optimum(seed):
    rng = np.random.default_rng(seed)
    Y = rng.uniform(0, 4, (6, 2))
    ds = dataset_from_arrays(None, rng.uniform(0, 4, (6, 2)), Y)
    forest = ForestModel([single_leaf(6, 2)])
    space = DecisionSpace.box([0.0, 0.0], [4.0, 4.0])
    cfg = PenaltyConfig()
    res = optimize_forest(forest, ds, None, squared_error_cost(), cfg, space, restarts=2,
                          grid_points_per_coord=101, seed=seed)
    oracle = grid_oracle(weight_objective(forest, ds, None, squared_error_cost(), cfg), space, 101)
    # each move also keeps the current coordinate, so the result can sit off the grid and below it
    assert res.value <= oracle.value + 1e-12
    np.testing.assert_allclose(res.z, oracle.z, atol=4.0 / 100 + 1e-12)


def test_forest_more_restarts_never_worse():
    ds = generate_pricing_data(300, 0)
    forest = fit_honest_forest(ds, "outcome", TreeParams(min_leaf=10), n_trees=10, seed=0)
    cfg = PenaltyConfig(1.0, 0.0, 100.0)
    x = ds.covariates[0]
    one = optimize_forest(forest, ds, x, negative_revenue_cost(), cfg, price_space(), restarts=1, seed=3)
    many = optimize_forest(forest, ds, x, negative_revenue_cost(), cfg, price_space(), restarts=20, seed=3)
    assert many.value <= one.value
    assert price_space().contains(many.z)


def test_linear_vertex_when_unpenalized():
    model = LinearModel("ols", np.array([1.0, 2.0, -3.0]), np.eye(3), 1.0)
    res = optimize_linear(model, [5.0], 0.0, DecisionSpace.box([0.0, -1.0], [2.0, 4.0]))
    np.testing.assert_allclose(res.z, [0.0, 4.0], atol=1e-9)


def test_linear_norm_minimization_projects_zero():
    model = LinearModel("ols", np.zeros(3), np.eye(3), 1.0)
    space = DecisionSpace.box([1.0, -2.0], [3.0, 2.0])
    res = optimize_linear(model, [0.7], 1.0, space)
    np.testing.assert_allclose(res.z, [1.0, 0.0], atol=1e-6)
    assert res.value == pytest.approx(np.hypot(0.7, 1.0), abs=1e-9)


def test_linear_squared_mean_reaches_zero():
    model = LinearModel("ols", np.array([1.0, -1.0]), np.eye(2), 1.0)
    res = optimize_linear(model, [3.0], 0.0, DecisionSpace.box([0.0], [10.0]), mode="squared_mean")
    assert res.z[0] == pytest.approx(3.0, abs=1e-5)


def test_linear_constrained_stays_feasible():
    model = LinearModel("ols", np.array([-1.0, -1.0]), np.eye(2), 0.5)
    space = DecisionSpace([0, 0], [1, 1], A=[[1, 1]], b=[1])
    res = optimize_linear(model, None, 0.3, space)
    assert space.contains(res.z, tol=1e-12)
    oracle = grid_oracle(lambda Z: model.objective(Z, 0.3), space, 401)
    assert res.value <= oracle.value + 1e-9


def test_prescribe_dispatch():
    model = LinearModel("ols", np.array([1.0]), np.eye(1), 1.0)
    res = prescribe(model, None, None, None, PenaltyConfig(), DecisionSpace.box([2.0], [3.0]))
    assert res.z[0] == pytest.approx(2.0)
    with pytest.raises(TypeError):
        prescribe(object(), None, None, None, PenaltyConfig(), DecisionSpace.box([0.0], [1.0]))
