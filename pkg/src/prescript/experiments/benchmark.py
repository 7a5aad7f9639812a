"""Replicated out-of-sample comparison of prescription methods.

Each replication draws a fresh training set for every training size while
the test covariates stay fixed, so all methods are paired by replication.
Pricing methods are scored by the mean true expected revenue of their test
prescriptions and dosing methods by the mean squared error against the
known optimal doses.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..data import DecisionSpace, ObservationalDataset, normalize_covariates, train_validation_split
from ..linear import fit_lasso_approx
from ..objective import CostFunction, PenaltyConfig, estimate_noise_variance, negative_revenue_cost, outcome_cost
from ..theory import TheoryInputs, lambdas_from_Kn, compute_Kn
from ..trees import TreeParams, fit_adaptive_forest, fit_honest_cart, fit_honest_forest
from ..tuning import CandidateModel, impute_counterfactuals, penalty_grid, scoring_targets, select_model
from . import dosing, pricing
from .stats import bonferroni, wilcoxon_signed_rank

METHODS = ("cart", "up-cart", "rf", "up-rf", "lasso", "up-lasso", "constant-dose", "oracle-lb")
LAMBDA_MODES = ("fixed", "validation", "theory")
FAMILIES = {"cart": "cart", "up-cart": "cart", "rf": "rf", "up-rf": "rf", "lasso": "lasso", "up-lasso": "lasso"}

DEFAULTS = {
    "experiment": "dosing",
    "methods": ["cart", "up-cart", "rf", "up-rf", "lasso", "up-lasso", "constant-dose", "oracle-lb"],
    "n_values": [250, 500, 1000, 2000],
    "replications": 20,
    "seed": 0,
    "test_size": 500,
    "lambda_mode": "validation",
    "lambda1": 1.0,
    "lambda2": 1.0,
    "lambda1_grid": [0.0, 0.1, 1.0, 10.0],
    "lambda2_grid": [0.0, 0.1, 1.0, 10.0],
    "validation_fraction": 0.25,
    "tuning_points": 50,
    "mse_weight": 1.0,
    "lipschitz": 1.0,
    "delta": 0.05,
    "cart": {"min_leaf": "sqrt"},
    "forest": {"min_leaf": 5, "n_trees": 50},
    "imputer": {"min_leaf": 5, "n_trees": 50},
    "oracle": {"min_leaf": 5, "n_trees": 50},
    "lasso_alpha": 0.05,
    "optimizer": {"restarts": 3, "grid_points_per_coord": 101},
    "normalize": True,
    "missing_rate": 0.05,
}

# "realized": learners predict the observed revenue z^T y, a z-free outcome.
# "demand": learners average demand vectors and the cost -z^T y is applied at
# the query price.
PRICING_DEFAULTS = {
    "pricing_cost": "realized",
    "lipschitz": 1570.0,
    "normalize": False,
    "methods": ["cart", "up-cart", "rf", "up-rf", "lasso", "up-lasso"],
}


def resolve_config(config: Optional[dict]) -> dict:
    """Fill defaults (experiment-specific ones first) and validate."""
    config = dict(config or {})
    experiment = config.get("experiment", DEFAULTS["experiment"])
    if experiment not in ("pricing", "dosing"):
        raise ValueError(f"unknown experiment {experiment!r}")
    merged = dict(DEFAULTS)
    if experiment == "pricing":
        merged.update(PRICING_DEFAULTS)
    for key, value in config.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    for name in merged["methods"]:
        if name not in METHODS:
            raise ValueError(f"unknown method {name!r}")
    if experiment == "pricing":
        if merged["pricing_cost"] not in ("realized", "demand"):
            raise ValueError(f"unknown pricing_cost {merged['pricing_cost']!r}")
        for name in ("oracle-lb", "constant-dose"):
            if name in merged["methods"]:
                raise ValueError(f"method {name!r} is only defined for the dosing experiment")
    if merged["lambda_mode"] not in LAMBDA_MODES:
        raise ValueError(f"unknown lambda_mode {merged['lambda_mode']!r}")
    if int(merged["replications"]) < 1 or not merged["n_values"]:
        raise ValueError("need at least one replication and one training size")
    return merged


def fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class Problem:
    """One experiment: cost, objective mode, decision space, test set and scorer."""

    name: str
    cost: CostFunction
    mode: str
    space: DecisionSpace
    test_X: np.ndarray
    test_truth: Optional[np.ndarray]

    def score(self, Z: np.ndarray) -> float:
        Z = np.asarray(Z, dtype=float).reshape(self.test_X.shape[0], -1)
        if self.name == "pricing":
            return float(np.mean(pricing.true_revenue(self.test_X, Z)))
        diff = Z[:, 0] - self.test_truth
        return float(np.mean(diff * diff))

    @property
    def higher_is_better(self) -> bool:
        return self.name == "pricing"


def build_problem(config: dict, seq: np.random.SeedSequence) -> Problem:
    rng = np.random.default_rng(seq)
    n_test = int(config["test_size"])
    if config["experiment"] == "pricing":
        cost = outcome_cost() if config["pricing_cost"] == "realized" else negative_revenue_cost()
        return Problem("pricing", cost, "plain", pricing.price_space(),
                       pricing.sample_covariates(n_test, rng), None)
    X, _, _, _, z_star = dosing.sample_patients(n_test, rng, config["missing_rate"])
    return Problem("dosing", outcome_cost(), "squared_mean", dosing.dose_space(), X, z_star)


def draw_training(config: dict, n: int, seq: np.random.SeedSequence):
    """Return (dataset, optimal doses or None)."""
    seed = int(seq.generate_state(1)[0])
    if config["experiment"] == "pricing":
        ds = pricing.generate_pricing_data(n, seed)
        if config["pricing_cost"] == "realized":
            revenue = np.einsum("ij,ij->i", ds.decisions, ds.outcomes)
            ds = ds.with_outcomes(-revenue.reshape(-1, 1))
        return ds, None
    return dosing.generate_dosing_data(n, seed=seed, missing_rate=config["missing_rate"])


def _with_intercept(ds: ObservationalDataset) -> ObservationalDataset:
    X = np.hstack([ds.covariates, np.ones((ds.n, 1))])
    return ObservationalDataset(X, ds.decisions, ds.outcomes,
                                covariate_names=tuple(ds.covariate_names) + ("intercept",),
                                decision_names=ds.decision_names, outcome_names=ds.outcome_names)


def leaf_size(rule, n: int) -> int:
    """Minimum leaf size: an integer, or ``"sqrt"`` for ceil(sqrt(n))."""
    if rule == "sqrt":
        return max(1, math.ceil(math.sqrt(n)))
    return int(rule)


@dataclass
class Learner:
    """Fit one learner family on a training set and build candidates from it."""

    family: str
    config: dict
    problem: Problem
    seed: int

    def prepare(self, ds: ObservationalDataset) -> ObservationalDataset:
        return _with_intercept(ds) if self.family == "lasso" else ds

    def prepare_x(self, X: np.ndarray) -> np.ndarray:
        return np.hstack([X, np.ones((X.shape[0], 1))]) if self.family == "lasso" else X

    def fit(self, ds: ObservationalDataset):
        """Return (model, sigma2, targets) for the prepared dataset."""
        targets = scoring_targets(ds, self.problem.cost, self.problem.mode).reshape(-1, 1)
        if self.family == "cart":
            opts = dict(self.config["cart"])
            opts["min_leaf"] = leaf_size(opts.get("min_leaf", "sqrt"), ds.n)
            params = TreeParams(**opts)
            model = fit_honest_cart(ds, targets, params, seed=self.seed)
        elif self.family == "rf":
            opts = dict(self.config["forest"])
            n_trees = int(opts.pop("n_trees", 50))
            model = fit_honest_forest(ds, targets, TreeParams(**opts), n_trees=n_trees, seed=self.seed)
        else:
            model = fit_lasso_approx(ds, float(self.config["lasso_alpha"]) * ds.n, targets)
            return model, model.sigma ** 2, targets[:, 0]
        sigma2, _ = estimate_noise_variance(ds, model, targets=targets)
        return model, sigma2, targets[:, 0]

    def candidate(self, name, model, cfg, ds, targets) -> CandidateModel:
        return CandidateModel(name, model, cfg, ds, self.problem.cost, self.problem.space, targets,
                              solver=dict(self.config["optimizer"], seed=self.seed))

    def theory_penalty(self, model, ds: ObservationalDataset, sigma2: float) -> PenaltyConfig:
        if self.family == "lasso":
            leaves, min_leaf = 1, 1
        elif self.family == "cart":
            leaves, min_leaf = model.n_leaves, model.params.min_leaf
        else:
            leaves = max(t.n_leaves for t in model.trees)
            min_leaf = model.trees[0].params.min_leaf
        t = TheoryInputs(leaves, min_leaf, self.problem.space.diameter, 0.0,
                         float(self.config["lipschitz"]), self.problem.space.p, float(self.config["delta"]))
        lam1, lam2 = lambdas_from_Kn(compute_Kn(t), t.delta, t.lipschitz)
        if self.family == "lasso":
            lam2 = 0.0
        return PenaltyConfig(lam1, lam2, sigma2, self.problem.mode)


def _prescribe_all(cand: CandidateModel, X: np.ndarray) -> np.ndarray:
    return np.array([cand.prescribe(x).z for x in X]).reshape(X.shape[0], -1)


def run_penalized(learner: Learner, ds: ObservationalDataset, X_test: np.ndarray, penalized: bool,
                  rng_seed: int) -> tuple[np.ndarray, dict]:
    """Prescriptions on the test covariates plus a record of the chosen penalty."""
    config = learner.config
    mode = learner.problem.mode
    full = learner.prepare(ds)
    X_eval = learner.prepare_x(X_test)
    if not penalized:
        model, sigma2, targets = learner.fit(full)
        cfg = PenaltyConfig(0.0, 0.0, sigma2, mode)
        return _prescribe_all(learner.candidate("direct", model, cfg, full, targets), X_eval), {}
    if config["lambda_mode"] == "fixed":
        model, sigma2, targets = learner.fit(full)
        lam2 = 0.0 if learner.family == "lasso" else float(config["lambda2"])
        cfg = PenaltyConfig(float(config["lambda1"]), lam2, sigma2, mode)
    elif config["lambda_mode"] == "theory":
        model, sigma2, targets = learner.fit(full)
        cfg = learner.theory_penalty(model, full, sigma2)
    else:
        train, val = train_validation_split(full, float(config["validation_fraction"]), rng_seed)
        model, sigma2, targets = learner.fit(train)
        lam2_grid = [0.0] if learner.family == "lasso" else config["lambda2_grid"]
        grid = penalty_grid(config["lambda1_grid"], lam2_grid, sigma2, mode)
        cands = [learner.candidate("tuned", model, cfg, train, targets) for cfg in grid]
        imp = dict(config["imputer"])
        imputer = impute_counterfactuals(val, learner.problem.cost, mode,
                                         TreeParams(min_leaf=int(imp.get("min_leaf", 5))),
                                         n_trees=int(imp.get("n_trees", 50)), seed=learner.seed)
        k = min(int(config["tuning_points"]), val.n)
        rows = np.sort(np.random.default_rng(rng_seed).choice(val.n, size=k, replace=False))
        sel = select_model(cands, val, imputer, rows=rows, mse_weight=float(config["mse_weight"]))
        model, sigma2, targets = learner.fit(full)
        cfg = PenaltyConfig(sel.best.cfg.lambda1, sel.best.cfg.lambda2, sigma2, mode)
    Z = _prescribe_all(learner.candidate("penalized", model, cfg, full, targets), X_eval)
    return Z, {"lambda1": cfg.lambda1, "lambda2": cfg.lambda2}


def run_method(method: str, problem: Problem, config: dict, ds: ObservationalDataset,
               z_star: Optional[np.ndarray], seed: int) -> tuple[np.ndarray, dict]:
    """Test prescriptions of one method on one training draw."""
    X_test = problem.test_X
    if method == "constant-dose":
        return np.full((X_test.shape[0], 1), dosing.CONSTANT_DOSE), {}
    train = ds
    if config["normalize"]:
        train = normalize_covariates(ds)
        X_test = train.scaler.transform(X_test)
    if method == "oracle-lb":
        target = ObservationalDataset(train.covariates, np.zeros((train.n, 1)), z_star.reshape(-1, 1))
        opts = dict(config["oracle"])
        n_trees = int(opts.pop("n_trees", 50))
        forest = fit_adaptive_forest(target, "outcome", TreeParams(**opts), n_trees=n_trees, seed=seed)
        Q = np.hstack([X_test, np.zeros((X_test.shape[0], 1))])
        pred = forest.weight_matrix(Q) @ z_star
        return np.clip(pred, problem.space.lower[0], problem.space.upper[0]).reshape(-1, 1), {}
    learner = Learner(FAMILIES[method], config, problem, seed)
    return run_penalized(learner, train, X_test, method.startswith("up-"), seed)


def run_replication(config: dict, problem: Problem, n: int, replication: int,
                    seq: np.random.SeedSequence) -> dict:
    """All methods on one training draw; returns {method: (metric, info)}."""
    data_seq, method_seq = seq.spawn(2)
    ds, z_star = draw_training(config, n, data_seq)
    seed = int(method_seq.generate_state(1)[0])
    out = {}
    for method in config["methods"]:
        Z, info = run_method(method, problem, config, ds, z_star, seed)
        out[method] = (problem.score(Z), info)
    return out


# paired comparisons reported when both members are present
PAIRS = (("up-cart", "cart"), ("up-rf", "rf"), ("up-lasso", "lasso"))


@dataclass
class BenchmarkReport:
    config: dict
    fingerprint: str
    seed: int
    metric: str
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    comparisons: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "metric": self.metric,
            "summary": self.summary,
            "comparisons": self.comparisons,
            "records": self.records,
        }

    def values(self, method: str, n: int) -> np.ndarray:
        rows = sorted((r for r in self.records if r["method"] == method and r["n"] == n),
                      key=lambda r: r["replication"])
        return np.array([r["metric"] for r in rows])

    def curve_rows(self) -> list:
        return [(r["method"], r["n"], r["replication"], r["metric"]) for r in self.records]


def _compare(report: BenchmarkReport, problem: Problem) -> None:
    methods = report.config["methods"]
    for n in report.config["n_values"]:
        block = []
        for better, base in PAIRS:
            if better not in methods or base not in methods:
                continue
            a, b = report.values(better, n), report.values(base, n)
            # positive improvement means the penalized method did better
            gain = a - b if problem.higher_is_better else b - a
            block.append({
                "n": n,
                "method": better,
                "baseline": base,
                "mean_improvement": float(gain.mean()),
                "relative_improvement": float(gain.mean() / abs(b.mean())) if b.mean() != 0 else math.nan,
                "wilcoxon_two_sided": wilcoxon_signed_rank(gain, "two-sided").to_dict(),
                "wilcoxon_greater": wilcoxon_signed_rank(gain, "greater").to_dict(),
            })
        adjusted = bonferroni([c["wilcoxon_two_sided"]["p_value"] for c in block]) if len(block) > 1 else \
            [c["wilcoxon_two_sided"]["p_value"] for c in block]
        for c, p in zip(block, adjusted):
            c["bonferroni_p_value"] = p
        report.comparisons.extend(block)


def run_benchmark(config: Optional[dict] = None, progress=None) -> BenchmarkReport:
    """Run every (replication, n, method) cell.

    Replication r and training size n get the seed sequence
    ``SeedSequence(seed).spawn(2)[1]`` child ``r`` spawned per n, so results
    do not depend on the order in which cells are computed.
    """
    config = resolve_config(config)
    seed = int(config["seed"])
    test_seq, rep_root = np.random.SeedSequence(seed).spawn(2)
    problem = build_problem(config, test_seq)
    n_values = [int(n) for n in config["n_values"]]
    config["n_values"] = n_values
    report = BenchmarkReport(config, fingerprint(config), seed,
                             "expected_revenue" if problem.name == "pricing" else "dose_mse")
    rep_seqs = rep_root.spawn(int(config["replications"]))
    for r, rep_seq in enumerate(rep_seqs):
        for n, cell_seq in zip(n_values, rep_seq.spawn(len(n_values))):
            results = run_replication(config, problem, n, r, cell_seq)
            for method in config["methods"]:
                metric, info = results[method]
                report.records.append({"method": method, "n": n, "replication": r, "metric": metric, **info})
            if progress is not None:
                progress(r, n, results)
    for method in config["methods"]:
        for n in n_values:
            vals = report.values(method, n)
            report.summary.setdefault(method, {})[str(n)] = {
                "mean": float(vals.mean()),
                "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                "replications": int(vals.size),
            }
    _compare(report, problem)
    return report
