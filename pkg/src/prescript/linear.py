"""OLS, ridge and approximate-lasso learners with closed-form predictive variance.

Each fitted model carries coefficients ``coef`` over the concatenated
(x, z) features and a shaping matrix ``M`` so that the variance of the
prediction at ``v`` is ``sigma**2 * v @ M @ v``. No intercept is added;
append a constant covariate if one is wanted.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import DataError, ObservationalDataset

LASSO_TOL = 1e-8
LASSO_MAX_SWEEPS = 100_000


class SingularDesignError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class LinearModel:
    kind: str
    coef: np.ndarray
    M: np.ndarray
    sigma: float
    alpha: float = 0.0
    active: Optional[np.ndarray] = None
    flags: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.coef.size

    def predict(self, V) -> np.ndarray:
        return np.atleast_2d(V) @ self.coef

    def variance_shape(self, V) -> np.ndarray:
        V = np.atleast_2d(V)
        return np.maximum(np.einsum("ij,jk,ik->i", V, self.M, V), 0.0)

    def objective(self, V, lambda1: float, mode: str = "plain") -> np.ndarray:
        """Vectorized objective over rows of V = (x, z)."""
        mean = self.predict(V)
        if mode == "squared_mean":
            mean = mean * mean
        elif mode != "plain":
            raise ValueError(f"unknown mode {mode!r}")
        if lambda1 == 0:
            return mean
        return mean + lambda1 * self.sigma * np.sqrt(self.variance_shape(V))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "coef": self.coef.tolist(),
            "M": self.M.tolist(),
            "sigma": self.sigma,
            "alpha": self.alpha,
            "active": None if self.active is None else np.flatnonzero(self.active).tolist(),
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "LinearModel":
        coef = np.asarray(payload["coef"], dtype=float)
        active = None
        if payload.get("active") is not None:
            active = np.zeros(coef.size, dtype=bool)
            active[payload["active"]] = True
        return cls(payload["kind"], coef, np.asarray(payload["M"], dtype=float),
                   float(payload["sigma"]), float(payload.get("alpha", 0.0)), active,
                   dict(payload.get("flags", {})))


def _design(train: ObservationalDataset, targets=None):
    A = train.features
    y = train.outcomes if targets is None else np.asarray(targets, dtype=float)
    y = y.reshape(train.n, -1)
    if y.shape[1] != 1:
        raise DataError("linear learners need a scalar target")
    return A, y[:, 0]


def _sigma(A, y, coef, n_params) -> float:
    resid = y - A @ coef
    dof = max(A.shape[0] - n_params, 1)
    return float(np.sqrt(resid @ resid / dof))


def fit_ols(train: ObservationalDataset, targets=None, ridge_fallback: Optional[float] = None) -> LinearModel:
    A, y = _design(train, targets)
    G = A.T @ A
    if np.linalg.matrix_rank(A) < A.shape[1]:
        if ridge_fallback is None:
            raise SingularDesignError("design matrix is rank deficient (A^T A is singular)")
        return fit_ridge(train, ridge_fallback, targets)
    M = np.linalg.inv(G)
    M = 0.5 * (M + M.T)
    coef = np.linalg.solve(G, A.T @ y)
    return LinearModel("ols", coef, M, _sigma(A, y, coef, A.shape[1]))


def fit_ridge(train: ObservationalDataset, alpha: float, targets=None) -> LinearModel:
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if alpha == 0:
        model = fit_ols(train, targets)
        return LinearModel("ridge", model.coef, model.M, model.sigma, 0.0)
    A, y = _design(train, targets)
    G = A.T @ A + alpha * np.eye(A.shape[1])
    M = np.linalg.inv(G)
    M = 0.5 * (M + M.T)
    coef = np.linalg.solve(G, A.T @ y)
    return LinearModel("ridge", coef, M, _sigma(A, y, coef, A.shape[1]), float(alpha))


def soft_threshold(value, t):
    return np.sign(value) * np.maximum(np.abs(value) - t, 0.0)


def lasso_coordinate_descent(A, y, alpha: float, tol: float = LASSO_TOL,
                             max_sweeps: int = LASSO_MAX_SWEEPS, start=None):
    """Cyclic coordinate descent for 0.5 * ||y - A b||^2 + alpha * ||b||_1.

    Returns (coef, sweeps, converged).
    """
    G = A.T @ A
    c = A.T @ y
    diag = np.diag(G).copy()
    D = A.shape[1]
    beta = np.zeros(D) if start is None else np.array(start, dtype=float)
    for sweep in range(1, max_sweeps + 1):
        largest = 0.0
        for j in range(D):
            if diag[j] == 0.0:
                continue
            old = beta[j]
            rho = c[j] - G[j] @ beta + diag[j] * old
            new = soft_threshold(rho, alpha) / diag[j]
            if new != old:
                beta[j] = new
                largest = max(largest, abs(new - old))
        if largest <= tol:
            return beta, sweep, True
    return beta, max_sweeps, False


def fit_lasso_approx(train: ObservationalDataset, alpha: float, targets=None) -> LinearModel:
    """Lasso fitted by coordinate descent, with the variance shaping matrix
    taken from the reweighted-ridge approximation on the active set."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    A, y = _design(train, targets)
    beta, sweeps, converged = lasso_coordinate_descent(A, y, alpha)
    active = beta != 0.0
    D = A.shape[1]
    M = np.zeros((D, D))
    flags = {"sweeps": sweeps, "converged": converged}
    if not active.any():
        flags["empty_active_set"] = True
        return LinearModel("lasso_approx", np.zeros(D), M, _sigma(A, y, np.zeros(D), 0),
                           float(alpha), active, flags)
    As = A[:, active]
    W = np.diag(1.0 / np.abs(beta[active]))
    Ms = np.linalg.inv(As.T @ As + alpha * W)
    Ms = 0.5 * (Ms + Ms.T)
    M[np.ix_(active, active)] = Ms
    approx = Ms @ As.T @ y
    flags["approximation_residual"] = float(np.max(np.abs(approx - beta[active])))
    return LinearModel("lasso_approx", beta, M, _sigma(A, y, beta, int(active.sum())),
                       float(alpha), active, flags)


def linear_objective(model: LinearModel, x, z, lambda1: float, mode: str = "plain") -> float:
    """Prediction plus lambda1 * sigma * sqrt(v^T M v) at v = (x, z).

    The bias penalty weight is fixed at zero for linear models.
    """
    v = np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)).ravel(),
                        np.atleast_1d(np.asarray(z, dtype=float)).ravel()])
    return float(model.objective(v.reshape(1, -1), lambda1, mode)[0])
