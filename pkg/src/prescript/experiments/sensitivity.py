"""Out-of-sample dose error of the penalized forest over a (lambda1, lambda2) grid.

The forest is fit once per replication and every grid cell prescribes from
that same fit, so cells differ only in their penalty weights. Training draws
follow the benchmark's seed derivation, which makes the (0, 0) cell equal
to the benchmark's unpenalized forest on the same config.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..data import normalize_covariates
from ..objective import PenaltyConfig
from .benchmark import Learner, build_problem, draw_training, fingerprint, resolve_config

SENSITIVITY_DEFAULTS = {
    "experiment": "dosing",
    "family": "rf",
    "n": 2000,
    "replications": 10,
    "test_size": 300,
    "lambda1_values": [0.0, 0.1, 1.0, 10.0, 100.0],
    "lambda2_values": [0.0, 0.1, 1.0, 10.0],
}


@dataclass
class SensitivityReport:
    config: dict
    fingerprint: str
    lambda1_values: list
    lambda2_values: list
    mean_mse: list
    per_replication: list = field(default_factory=list)

    @property
    def baseline(self) -> float:
        """Mean error of the unpenalized (0, 0) cell."""
        i = self.lambda1_values.index(0.0)
        j = self.lambda2_values.index(0.0)
        return self.mean_mse[i][j]

    def cell(self, lambda1: float, lambda2: float) -> float:
        return self.mean_mse[self.lambda1_values.index(lambda1)][self.lambda2_values.index(lambda2)]

    def fraction_better(self) -> float:
        """Share of cells other than (0, 0) whose mean error is below the baseline."""
        base = self.baseline
        others = [v for i, row in enumerate(self.mean_mse) for j, v in enumerate(row)
                  if self.lambda1_values[i] != 0.0 or self.lambda2_values[j] != 0.0]
        return float(np.mean([v < base for v in others])) if others else float("nan")

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "fingerprint": self.fingerprint,
            "lambda1_values": self.lambda1_values,
            "lambda2_values": self.lambda2_values,
            "mean_mse": self.mean_mse,
            "baseline": self.baseline,
            "fraction_better": self.fraction_better(),
            "per_replication": self.per_replication,
        }

    def csv_rows(self) -> list:
        """(lambda1, lambda2, mean_mse) with lambda1 varying slowest."""
        return [(a, b, self.mean_mse[i][j]) for i, a in enumerate(self.lambda1_values)
                for j, b in enumerate(self.lambda2_values)]


def resolve_sensitivity_config(config: Optional[dict] = None,
                               lambda1_values: Optional[Sequence[float]] = None,
                               lambda2_values: Optional[Sequence[float]] = None) -> dict:
    merged = {**SENSITIVITY_DEFAULTS, **(config or {})}
    if lambda1_values is not None:
        merged["lambda1_values"] = list(lambda1_values)
    if lambda2_values is not None:
        merged["lambda2_values"] = list(lambda2_values)
    merged["lambda1_values"] = sorted({float(v) for v in merged["lambda1_values"]} | {0.0})
    merged["lambda2_values"] = sorted({float(v) for v in merged["lambda2_values"]} | {0.0})
    if any(v < 0 for v in merged["lambda1_values"] + merged["lambda2_values"]):
        raise ValueError("penalty weights must be nonnegative")
    if merged["family"] not in ("cart", "rf", "lasso"):
        raise ValueError(f"unknown learner family {merged['family']!r}")
    merged["n"] = int(merged["n"])
    merged["replications"] = int(merged["replications"])
    if merged["replications"] < 1:
        raise ValueError("need at least one replication")
    return merged


def sensitivity_grid(config: Optional[dict] = None, lambda1_values: Optional[Sequence[float]] = None,
                     lambda2_values: Optional[Sequence[float]] = None, progress=None) -> SensitivityReport:
    """Mean test error for every (lambda1, lambda2) pair, with (0, 0) always included."""
    cfg = resolve_sensitivity_config(config, lambda1_values, lambda2_values)
    bench = resolve_config({k: v for k, v in cfg.items()
                            if k not in ("family", "n", "lambda1_values", "lambda2_values")}
                           | {"n_values": [cfg["n"]], "lambda_mode": "fixed"})
    l1s, l2s = cfg["lambda1_values"], cfg["lambda2_values"]
    test_seq, rep_root = np.random.SeedSequence(int(bench["seed"])).spawn(2)
    problem = build_problem(bench, test_seq)
    scores = np.zeros((cfg["replications"], len(l1s), len(l2s)))
    for r, rep_seq in enumerate(rep_root.spawn(cfg["replications"])):
        data_seq, method_seq = rep_seq.spawn(1)[0].spawn(2)
        ds, _ = draw_training(bench, cfg["n"], data_seq)
        seed = int(method_seq.generate_state(1)[0])
        X_test = problem.test_X
        if bench["normalize"]:
            ds = normalize_covariates(ds)
            X_test = ds.scaler.transform(X_test)
        learner = Learner(cfg["family"], bench, problem, seed)
        full = learner.prepare(ds)
        X_eval = learner.prepare_x(X_test)
        model, sigma2, targets = learner.fit(full)
        for i, a in enumerate(l1s):
            for j, b in enumerate(l2s):
                pen = PenaltyConfig(a, 0.0 if cfg["family"] == "lasso" else b, sigma2, problem.mode)
                cand = learner.candidate("grid", model, pen, full, targets)
                Z = np.array([cand.prescribe(x).z for x in X_eval])
                scores[r, i, j] = problem.score(Z)
        if progress is not None:
            progress(r, scores[r])
    return SensitivityReport(cfg, fingerprint(cfg), l1s, l2s, scores.mean(axis=0).tolist(),
                             scores.tolist())
