"""Synthetic five-product pricing problem.

Covariates X in R^2 are i.i.d. N(10, 1). Historical prices are drawn from
N(M X, 100 I) with the 5x2 loading matrix ``PRICE_LOADINGS`` below, and
demands from N(mu(X, Z), 2500 I). Products 1-2 are substitutes of each
other, 3-4 are complements of 1-2.
"""
from __future__ import annotations

import numpy as np

from ..data import DecisionSpace, ObservationalDataset

N_PRODUCTS = 5
PRICE_CAP = 50.0
PRICE_LOADINGS = np.array([
    [1.0, 0.0],
    [1.0, 0.0],
    [0.0, 1.0],
    [0.0, 1.0],
    [0.5, 0.5],
])
PRICE_VARIANCE = 100.0
DEMAND_VARIANCE = 2500.0


def expected_demand(X, Z) -> np.ndarray:
    """Mean demand for each product; X is (n, 2) and Z is (n, 5)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    x1, x2 = X[:, 0], X[:, 1]
    z1, z2, z3, z4, z5 = Z.T
    return np.column_stack([
        500 - z1 ** 2 / 10 - x1 * z1 / 10 - x1 ** 2 / 10 - z2,
        500 - z2 ** 2 / 10 - x1 * z2 / 10 - x1 ** 2 / 10 - z1,
        500 - z3 ** 2 / 10 - x2 * z3 / 10 - x2 ** 2 / 10 + z1 + z2,
        500 - z4 ** 2 / 10 - x2 * z4 / 10 - x2 ** 2 / 10 + z1 + z2,
        500 - z5 ** 2 / 10 - x2 * z5 / 20 - x1 * z5 / 20 - x2 ** 2 / 10,
    ])


def true_revenue(X, Z) -> np.ndarray:
    """Expected revenue z^T mu(x, z), row-wise."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    return np.einsum("ij,ij->i", Z, expected_demand(X, Z))


def pricing_true_revenue(x, z) -> float:
    return float(true_revenue(np.reshape(x, (1, -1)), np.reshape(z, (1, -1)))[0])


def sample_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(10.0, 1.0, size=(n, 2))


def generate_pricing_data(n: int, seed) -> ObservationalDataset:
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    X = sample_covariates(n, rng)
    Z = X @ PRICE_LOADINGS.T + rng.normal(0.0, np.sqrt(PRICE_VARIANCE), size=(n, N_PRODUCTS))
    Y = expected_demand(X, Z) + rng.normal(0.0, np.sqrt(DEMAND_VARIANCE), size=(n, N_PRODUCTS))
    return ObservationalDataset(
        X, Z, Y,
        covariate_names=("x1", "x2"),
        decision_names=tuple(f"price{k + 1}" for k in range(N_PRODUCTS)),
        outcome_names=tuple(f"demand{k + 1}" for k in range(N_PRODUCTS)),
    )


def price_space(cap: float = PRICE_CAP) -> DecisionSpace:
    return DecisionSpace.box(np.zeros(N_PRODUCTS), np.full(N_PRODUCTS, cap))
