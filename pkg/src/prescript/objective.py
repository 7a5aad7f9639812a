"""Predicted cost, variance and bias penalties, and the penalized objective.

Costs are vectorized row-wise: ``cost(Z, Y)`` takes (k, p) decisions and
(k, q) outcomes and returns the k costs c(z_k; y_k).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import ObservationalDataset

MODES = ("plain", "squared_mean")


@dataclass(frozen=True)
class CostFunction:
    """Row-wise cost evaluator with declared Lipschitz constant and bound."""

    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz: float = float("nan")
    bound: float = float("inf")
    name: str = "custom"
    z_free: bool = False
    linear_in_outcome: bool = False

    def __call__(self, Z, Y) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y.reshape(-1, 1)
        return np.asarray(self.evaluate(Z, Y), dtype=float)

    @property
    def exceeds_unit_bound(self) -> bool:
        return not self.bound <= 1.0


def outcome_cost(lipschitz: float = float("nan")) -> CostFunction:
    """c(z; y) = y for a scalar outcome."""
    return CostFunction(lambda Z, Y: Y[:, 0].copy(), lipschitz, name="outcome", z_free=True,
                        linear_in_outcome=True)


def negative_revenue_cost() -> CostFunction:
    """c(z; y) = -z^T y: prices times demands, negated so that minimizing
    cost maximizes revenue."""
    return CostFunction(lambda Z, Y: -np.einsum("ij,ij->i", Z, Y), name="negative_revenue",
                        linear_in_outcome=True)


def squared_error_cost() -> CostFunction:
    """c(z; y) = ||z - y||^2."""
    return CostFunction(lambda Z, Y: ((Z - Y) ** 2).sum(axis=1), name="squared_error")


@dataclass(frozen=True)
class PenaltyConfig:
    lambda1: float = 0.0
    lambda2: float = 0.0
    sigma2: float = 1.0
    mode: str = "plain"

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "sigma2"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {value}")
        if self.mode not in MODES:
            raise ValueError(f"unknown objective mode {self.mode!r}")

    @property
    def unpenalized(self) -> bool:
        return self.lambda1 == 0 and self.lambda2 == 0

    def to_dict(self) -> dict:
        return {"lambda1": self.lambda1, "lambda2": self.lambda2, "sigma2": self.sigma2, "mode": self.mode}


@dataclass(frozen=True)
class Decomposition:
    mean_term: float
    sqrt_variance: float
    bias: float

    def to_dict(self) -> dict:
        return {"mean_term": self.mean_term, "sqrt_variance": self.sqrt_variance, "bias": self.bias}


def _weights(w):
    if hasattr(w, "indices"):
        return np.asarray(w.indices), np.asarray(w.values)
    w = np.asarray(w, dtype=float)
    idx = np.flatnonzero(w)
    return idx, w[idx]


def predicted_cost(w, cost: CostFunction, z, ds: ObservationalDataset) -> float:
    idx, vals = _weights(w)
    z = np.atleast_1d(np.asarray(z, dtype=float)).ravel()
    costs = cost(np.broadcast_to(z, (idx.size, z.size)), ds.outcomes[idx])
    return float(vals @ costs)


def variance_penalty(w, sigma2: float) -> float:
    """sigma^2 * sum_i w_i^2 (homoscedastic conditional variance)."""
    _, vals = _weights(w)
    return float(sigma2 * (vals @ vals))


def bias_penalty(w, q, ds: ObservationalDataset) -> float:
    """Weighted mean Euclidean distance from the query to the training points."""
    idx, vals = _weights(w)
    q = q.concat if hasattr(q, "concat") else np.asarray(q, dtype=float).ravel()
    dist = np.linalg.norm(ds.features[idx] - q, axis=1)
    return float(vals @ dist)


def penalized_objective(w, q, cost: Optional[CostFunction], ds: ObservationalDataset,
                        cfg: PenaltyConfig) -> tuple[float, Decomposition]:
    """mu_hat + lambda1 sqrt(V) + lambda2 B, or mean(Y)^2 + ... in squared_mean mode."""
    z = q.z if hasattr(q, "z") else np.asarray(q, dtype=float).ravel()[ds.d:]
    if cfg.mode == "plain":
        mean_term = predicted_cost(w, cost, z, ds)
    else:
        idx, vals = _weights(w)
        mean_y = float(vals @ ds.outcomes[idx, 0])
        mean_term = mean_y * mean_y
    root_v = float(np.sqrt(variance_penalty(w, cfg.sigma2)))
    bias = bias_penalty(w, q, ds)
    value = mean_term + cfg.lambda1 * root_v + cfg.lambda2 * bias
    return value, Decomposition(mean_term, root_v, bias)


def objective_batch(W: np.ndarray, Q: np.ndarray, cost: Optional[CostFunction],
                    ds: ObservationalDataset, cfg: PenaltyConfig):
    """Objective for each row of a dense weight matrix W (m, n) at queries Q (m, d+p).

    Returns (values, mean_terms, sqrt_variances, biases). Only columns that
    carry weight somewhere in W are touched.
    """
    cols = np.flatnonzero(W.any(axis=0))
    Wc = W[:, cols]
    root_v = np.sqrt(cfg.sigma2 * (Wc * Wc).sum(axis=1))
    if cfg.mode == "plain":
        rows, k = np.nonzero(Wc)
        z = Q[rows, ds.d:]
        costs = cost(z, ds.outcomes[cols[k]])
        mean_term = np.bincount(rows, weights=Wc[rows, k] * costs, minlength=W.shape[0])
    else:
        mean_y = Wc @ ds.outcomes[cols, 0]
        mean_term = mean_y * mean_y
    if cfg.lambda2 != 0:
        F = ds.features[cols]
        dist = np.sqrt(np.maximum(
            (Q * Q).sum(axis=1)[:, None] + (F * F).sum(axis=1)[None, :] - 2.0 * Q @ F.T, 0.0))
        bias = (Wc * dist).sum(axis=1)
    else:
        bias = np.zeros(W.shape[0])
    values = mean_term + cfg.lambda1 * root_v + cfg.lambda2 * bias
    return values, mean_term, root_v, bias


def objective_triplets(rows, cols, vals, Q: np.ndarray, cost: Optional[CostFunction],
                       ds: ObservationalDataset, cfg: PenaltyConfig):
    """Same as :func:`objective_batch` but from (row, col, weight) entries that
    may repeat a (row, col) pair."""
    m = Q.shape[0]
    n = ds.n
    dense = np.bincount(rows * n + cols, weights=vals, minlength=m * n).reshape(m, n)
    root_v = np.sqrt(cfg.sigma2 * np.einsum("ij,ij->i", dense, dense))
    if cfg.mode == "plain":
        costs = cost(Q[rows, ds.d:], ds.outcomes[cols])
        mean_term = np.bincount(rows, weights=vals * costs, minlength=m)
    else:
        mean_y = np.bincount(rows, weights=vals * ds.outcomes[cols, 0], minlength=m)
        mean_term = mean_y * mean_y
    if cfg.lambda2 != 0:
        diff = ds.features[cols] - Q[rows]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        bias = np.bincount(rows, weights=vals * dist, minlength=m)
    else:
        bias = np.zeros(m)
    values = mean_term + cfg.lambda1 * root_v + cfg.lambda2 * bias
    return values, mean_term, root_v, bias


def estimate_noise_variance(train: ObservationalDataset, learner="forest", targets=None,
                            seed: int = 0, **params) -> tuple[float, dict]:
    """Homoscedastic variance estimate: training MSE of a learner that
    predicts the target from (X, Z).

    ``learner`` is one of "ols", "cart", "forest", or a fitted tree-family or
    linear model. Returns (sigma2, flags).
    """
    from .linear import LinearModel, fit_ols
    from .trees import TreeParams, fit_honest_cart, fit_honest_forest, training_targets

    y = training_targets(train, "outcome" if targets is None else targets)
    flags: dict = {}
    try:
        if isinstance(learner, LinearModel) or learner == "ols":
            model = learner if isinstance(learner, LinearModel) else fit_ols(train, targets=y)
            pred = model.predict(train.features).reshape(-1, 1)
        else:
            if learner == "cart":
                model = fit_honest_cart(train, y, TreeParams(**params), seed=seed)
            elif learner == "forest":
                model = fit_honest_forest(train, y, TreeParams(**params), seed=seed)
            else:
                model = learner
            pred = model.weight_matrix(train.features) @ y
        sigma2 = float(np.mean((y - pred) ** 2))
        if not np.isfinite(sigma2):
            raise FloatingPointError("non-finite training error")
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as err:
        flags["fallback"] = f"sample variance used: {err}"
        sigma2 = float(np.mean(np.var(y, axis=0, ddof=1))) if train.n > 1 else 0.0
    return sigma2, flags
