"""One-dimensional checks of the deviation bound and of regret decay.

Both use a single decision z in [0, 1] with no covariates, an outcome cost
c(z; y) = y and Gaussian noise, so the true expected cost is known.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..data import DecisionSpace, dataset_from_arrays
from ..objective import PenaltyConfig, estimate_noise_variance, outcome_cost
from ..optimize import optimize_tree
from ..theory import TheoryInputs, generalization_bound, theory_lambdas
from ..trees import TreeParams, fit_honest_cart

UNIT_SPACE = DecisionSpace.box([0.0], [1.0])


def wave(z):
    """Mean cost 0.5 sin(2 pi z); Lipschitz constant pi."""
    return 0.5 * np.sin(2.0 * np.pi * np.asarray(z, dtype=float))


WAVE_LIPSCHITZ = math.pi


@dataclass
class CoverageResult:
    replications: int
    holds: int
    coverage: float
    worst_margin: float
    delta: float

    def to_dict(self) -> dict:
        return asdict(self)


def coverage_experiment(n: int = 400, replications: int = 200, delta: float = 0.05,
                        noise_sd: float = 0.1, min_leaf: int = 20, grid_size: int = 1001,
                        seed: int = 0) -> CoverageResult:
    """Fraction of fixed-design draws where mu - mu_hat stays below the bound
    at every point of a z grid.

    The design points Z are drawn once; each replication redraws only the
    outcomes and refits an honest tree. The bound uses the true noise
    variance and Lipschitz constant and the fitted tree's leaf count.
    """
    design_rng, *rep_seqs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(replications + 1)]
    Z = design_rng.uniform(0.0, 1.0, size=(n, 1))
    grid = np.linspace(0.0, 1.0, grid_size).reshape(-1, 1)
    truth = wave(grid[:, 0])
    holds, worst = 0, -math.inf
    for rng in rep_seqs:
        Y = wave(Z[:, 0]) + rng.normal(0.0, noise_sd, n)
        ds = dataset_from_arrays(None, Z, Y)
        tree = fit_honest_cart(ds, "outcome", TreeParams(min_leaf=min_leaf), seed=seed)
        W = tree.weight_matrix(grid)
        mu_hat = W @ Y
        V = noise_sd ** 2 * np.einsum("ij,ij->i", W, W)
        B = (W * np.abs(grid - Z[:, 0][None, :])).sum(axis=1)
        t = TheoryInputs(tree.n_leaves, min_leaf, 1.0, 0.0, WAVE_LIPSCHITZ, 1, delta)
        margin = float(np.max(truth - mu_hat - generalization_bound(t, V, B)))
        worst = max(worst, margin)
        holds += margin <= 0.0
    return CoverageResult(replications, holds, holds / replications, worst, delta)


def bowl(z):
    """Mean cost (z - 0.7)^2 on [0, 1]; minimized at 0.7, Lipschitz 1.4."""
    return (np.asarray(z, dtype=float) - 0.7) ** 2


BOWL_LIPSCHITZ = 1.4
BOWL_OPTIMUM = 0.7


@dataclass
class ConsistencyResult:
    n_values: list
    median_regret: list
    regrets: list
    monotone: bool

    def to_dict(self) -> dict:
        return asdict(self)


def leaf_size_schedule(n: int) -> int:
    """Minimum leaf size growing like n^0.4."""
    return max(5, int(math.ceil(n ** 0.4)))


def consistency_experiment(n_values: Sequence[int] = (200, 800, 3200), seeds: int = 20,
                           noise_sd: float = 0.1, delta: float = 0.05, seed: int = 0) -> ConsistencyResult:
    """Regret of the penalized honest-tree prescription as n grows.

    Historical decisions are Beta(2, 4), so the optimum at 0.7 is sparsely
    sampled. Penalty weights follow the theory choice with the fitted tree's
    leaf count and the schedule ``leaf_size_schedule(n)``.
    """
    cost = outcome_cost(BOWL_LIPSCHITZ)
    regrets = []
    for n, n_seq in zip(n_values, np.random.SeedSequence(seed).spawn(len(n_values))):
        row = []
        for child in n_seq.spawn(seeds):
            rng = np.random.default_rng(child)
            Z = rng.beta(2.0, 4.0, size=(n, 1))
            Y = bowl(Z[:, 0]) + rng.normal(0.0, noise_sd, n)
            ds = dataset_from_arrays(None, Z, Y)
            min_leaf = leaf_size_schedule(n)
            tree = fit_honest_cart(ds, "outcome", TreeParams(min_leaf=min_leaf),
                                   seed=int(rng.integers(2 ** 31)))
            sigma2, _ = estimate_noise_variance(ds, tree)
            lam1, lam2 = theory_lambdas(TheoryInputs(tree.n_leaves, min_leaf, 1.0, 0.0, BOWL_LIPSCHITZ, 1, delta))
            pres = optimize_tree(tree, ds, None, cost, PenaltyConfig(lam1, lam2, sigma2), UNIT_SPACE)
            row.append(float(bowl(pres.z[0]) - bowl(BOWL_OPTIMUM)))
        regrets.append(row)
    medians = [float(np.median(r)) for r in regrets]
    monotone = all(b < a for a, b in zip(medians, medians[1:]))
    return ConsistencyResult([int(n) for n in n_values], medians, regrets, monotone)
