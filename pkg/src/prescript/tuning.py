"""Selection of learners and penalty weights on a validation split.

Counterfactual outcomes on the validation split are imputed by a forest fit
on that split alone. A candidate's score is the mean squared error of its
target predictions on the validation rows plus the mean imputed cost of its
prescriptions at the validation covariates.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product
from typing import Optional, Sequence

import numpy as np

from .data import DecisionSpace, ObservationalDataset
from .linear import LinearModel
from .objective import CostFunction, PenaltyConfig
from .optimize import Prescription, prescribe
from .trees import ForestModel, TreeParams, fit_adaptive_forest, fit_honest_forest, training_targets


def scoring_targets(ds: ObservationalDataset, cost: Optional[CostFunction], mode: str) -> np.ndarray:
    """Scalar quantity a learner predicts: the outcome in squared-mean mode,
    the realized cost c(Z_i; Y_i) otherwise."""
    if mode == "squared_mean" or cost is None:
        return training_targets(ds, "outcome")[:, 0]
    return training_targets(ds, "cost", cost)[:, 0]


@dataclass
class CandidateModel:
    """One fitted (learner, penalty) combination.

    ``train`` is the data the model was fit on; tree-family predictions
    average ``targets`` with the learner's weights.
    """

    name: str
    model: object
    cfg: PenaltyConfig
    train: ObservationalDataset
    cost: Optional[CostFunction]
    space: DecisionSpace
    targets: np.ndarray
    solver: dict = field(default_factory=dict)

    def predict(self, features) -> np.ndarray:
        F = np.atleast_2d(np.asarray(features, dtype=float))
        if isinstance(self.model, LinearModel):
            return self.model.predict(F)
        return self.model.weight_matrix(F) @ self.targets

    def prescribe(self, x) -> Prescription:
        kwargs = self.solver if isinstance(self.model, ForestModel) else {}
        return prescribe(self.model, self.train, x, self.cost, self.cfg, self.space, **kwargs)

    def with_penalty(self, cfg: PenaltyConfig) -> "CandidateModel":
        return replace(self, cfg=cfg)


class CounterfactualImputer:
    """Forest estimate of the expected cost at arbitrary (x, z)."""

    def __init__(self, forest: ForestModel, targets: np.ndarray, mode: str = "plain"):
        self.forest = forest
        self.targets = np.asarray(targets, dtype=float)
        self.mode = mode

    def predict(self, x, z) -> np.ndarray:
        """Imputed mean target at rows of (x, z)."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        Z = np.atleast_2d(np.asarray(z, dtype=float))
        if X.shape[1] == 0:
            X = np.zeros((Z.shape[0], 0))
        return self.forest.weight_matrix(np.hstack([X, Z])) @ self.targets

    def cost(self, x, z) -> np.ndarray:
        """Imputed cost: the prediction itself, or its square in squared-mean mode."""
        pred = self.predict(x, z)
        return pred * pred if self.mode == "squared_mean" else pred


def impute_counterfactuals(validation: ObservationalDataset, cost: Optional[CostFunction] = None,
                           mode: str = "plain", params: Optional[TreeParams] = None,
                           n_trees: int = 50, seed: int = 0, honest: bool = False) -> CounterfactualImputer:
    """Fit the imputation forest on the validation split.

    The default is a conventional forest whose splits see every feature;
    honest forests shrink hard toward the mean in sparsely sampled decision
    regions, which is where unpenalized prescriptions tend to land.
    """
    if validation.n < 2:
        raise ValueError("validation split needs at least two rows")
    targets = scoring_targets(validation, cost, mode)
    params = params or TreeParams(min_leaf=5)
    fit = fit_honest_forest if honest else fit_adaptive_forest
    forest = fit(validation, targets.reshape(-1, 1), params, n_trees=n_trees, seed=seed)
    return CounterfactualImputer(forest, targets, mode)


@dataclass
class Selection:
    best: CandidateModel
    index: int
    scores: list
    mse: list
    imputed_cost: list


def select_model(candidates: Sequence[CandidateModel], validation: ObservationalDataset,
                 imputer: CounterfactualImputer, rows: Optional[np.ndarray] = None,
                 mse_weight: float = 1.0) -> Selection:
    """Return the candidate minimizing ``mse_weight * MSE + mean imputed cost``.

    ``rows`` restricts the prescriptions to a subset of validation rows (the
    MSE always uses every validation row). Ties go to the earliest candidate.
    """
    if not candidates:
        raise ValueError("need at least one candidate")
    rows = np.arange(validation.n) if rows is None else np.asarray(rows, dtype=int)
    X = validation.covariates[rows]
    scores, mses, costs = [], [], []
    mse_cache: dict = {}
    for cand in candidates:
        key = id(cand.model)
        if key not in mse_cache:
            truth = scoring_targets(validation, cand.cost, cand.cfg.mode)
            resid = cand.predict(validation.features) - truth
            mse_cache[key] = float(np.mean(resid * resid))
        mse = mse_cache[key]
        Z = np.array([cand.prescribe(x).z for x in X]).reshape(rows.size, -1)
        imputed = float(np.mean(imputer.cost(X, Z)))
        mses.append(mse)
        costs.append(imputed)
        scores.append(mse_weight * mse + imputed)
    best = int(np.argmin(scores))
    return Selection(candidates[best], best, scores, mses, costs)


def penalty_grid(lambda1_values: Sequence[float], lambda2_values: Sequence[float],
                 sigma2: float, mode: str = "plain") -> list[PenaltyConfig]:
    """All (lambda1, lambda2) pairs, lambda1 varying slowest."""
    return [PenaltyConfig(float(a), float(b), sigma2, mode)
            for a, b in product(lambda1_values, lambda2_values)]
