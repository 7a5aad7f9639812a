"""Command-line front end.

Every command writes JSON (sorted keys, repr floats, NaN as null) or CSV, so
rerunning a command with the same inputs reproduces its output byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import DataError, DecisionSpace, ObservationalDataset, Scaler, load_dataset, normalize_covariates
from .linear import LinearModel, fit_lasso_approx, fit_ols, fit_ridge
from .objective import (PenaltyConfig, estimate_noise_variance, negative_revenue_cost, outcome_cost,
                        squared_error_cost)
from .optimize import prescribe
from .theory import TheoryInputs, compute_Kn, example1_analytic, example1_montecarlo, lambdas_from_Kn
from .trees import TreeParams, fit_honest_cart, fit_honest_forest, model_from_dict, training_targets

MODEL_FORMAT = "prescript-model/1"
COSTS = {"outcome": outcome_cost, "negative_revenue": negative_revenue_cost,
         "squared_error": squared_error_cost}
TREE_KEYS = ("min_leaf", "max_leaves", "honesty_fraction", "max_depth", "max_features", "min_structure_leaf")


def _plain(obj):
    """Recursively convert numpy values to builtins and non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _emit(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _dataset_dict(ds: ObservationalDataset) -> dict:
    return {
        "covariates": ds.covariates,
        "decisions": ds.decisions,
        "outcomes": ds.outcomes,
        "covariate_names": list(ds.covariate_names),
        "decision_names": list(ds.decision_names),
        "outcome_names": list(ds.outcome_names),
    }


def _dataset_from_dict(payload: dict) -> ObservationalDataset:
    n = len(payload["decisions"])
    X = np.asarray(payload["covariates"], dtype=float).reshape(n, len(payload["covariate_names"]))
    return ObservationalDataset(X, payload["decisions"], payload["outcomes"],
                                covariate_names=tuple(payload["covariate_names"]),
                                decision_names=tuple(payload["decision_names"]),
                                outcome_names=tuple(payload["outcome_names"]))


def fit_command(args) -> int:
    params = _read_json(args.params) if args.params else {}
    ds = load_dataset(args.data, _read_json(args.schema))
    scaler = None
    if params.get("normalize", False):
        ds = normalize_covariates(ds)
        scaler = ds.scaler.to_dict()
    cost_name = params.get("cost", "outcome")
    if cost_name not in COSTS:
        raise DataError(f"unknown cost {cost_name!r}")
    cost = COSTS[cost_name]()
    mode = params.get("mode", "plain")
    if params.get("target", "outcome") == "cost":
        # learn the realized cost directly; it no longer depends on the query decision
        ds = ds.with_outcomes(training_targets(ds, "cost", cost))
        cost_name = "outcome"
    elif params.get("target", "outcome") != "outcome":
        raise DataError("target must be 'outcome' or 'cost'")
    seed = int(params.get("seed", 0))
    tree_params = TreeParams(**{k: params[k] for k in TREE_KEYS if k in params})
    if args.model == "cart":
        model = fit_honest_cart(ds, "outcome", tree_params, seed=seed)
    elif args.model == "rf":
        model = fit_honest_forest(ds, "outcome", tree_params, n_trees=int(params.get("n_trees", 50)), seed=seed)
    elif args.model == "ols":
        model = fit_ols(ds)
    elif args.model == "ridge":
        model = fit_ridge(ds, float(params.get("alpha", 1.0)))
    else:
        model = fit_lasso_approx(ds, float(params.get("alpha", 1.0)))
    if isinstance(model, LinearModel):
        sigma2, flags = model.sigma ** 2, dict(model.flags)
    else:
        sigma2, flags = estimate_noise_variance(ds, model)
    payload = {
        "format": MODEL_FORMAT,
        "learner": args.model,
        "cost": cost_name,
        "mode": mode,
        "sigma2": sigma2,
        "params": params,
        "flags": flags,
        "scaler": scaler,
        "model": model.to_dict(),
        "training": _dataset_dict(ds),
    }
    _emit(dumps(payload), args.out)
    return 0


def _read_rows(path, names: Sequence[str]) -> np.ndarray:
    """Covariate rows from a CSV with a header naming (at least) ``names``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [row for row in reader if row]
    missing = [c for c in names if c not in header]
    if missing:
        raise DataError(f"columns not found in {path}: {', '.join(missing)}")
    cols = [header.index(c) for c in names]
    return np.array([[float(row[j]) for j in cols] for row in rows], dtype=float).reshape(len(rows), len(cols))


def prescribe_command(args) -> int:
    payload = _read_json(args.model)
    if payload.get("format") != MODEL_FORMAT:
        raise DataError("not a model file written by 'fit'")
    ds = _dataset_from_dict(payload["training"])
    space = DecisionSpace.from_dict(_read_json(args.space))
    if space.p != ds.p:
        raise DataError(f"space has {space.p} decisions, model expects {ds.p}")
    if args.x is not None:
        X = _read_rows(args.x, ds.covariate_names)
    elif ds.d == 0:
        X = np.zeros((1, 0))
    else:
        raise DataError("--x is required for models with covariates")
    X_raw = X
    if payload.get("scaler"):
        X = Scaler.from_dict(payload["scaler"]).transform(X)
    learner = payload["learner"]
    model = LinearModel.from_dict(payload["model"]) if learner in ("ols", "ridge", "lasso") \
        else model_from_dict(payload["model"])
    cfg = PenaltyConfig(args.lambda1, args.lambda2, float(payload["sigma2"]), payload["mode"])
    cost = COSTS[payload["cost"]]()
    kwargs = {"restarts": args.restarts, "grid_points_per_coord": args.grid_points, "seed": args.seed} \
        if learner == "rf" else {}
    results = []
    for x_raw, x in zip(X_raw, X):
        pres = prescribe(model, ds, x, cost, cfg, space, **kwargs)
        results.append({"x": x_raw, **pres.to_dict()})
    _emit(dumps({"penalty": cfg.to_dict(), "learner": learner, "space": space.to_dict(),
                 "prescriptions": results}), args.out)
    return 0


def benchmark_command(args) -> int:
    from .experiments.benchmark import run_benchmark
    config = _read_json(args.config) if args.config else {}
    if args.replications is not None:
        config["replications"] = args.replications
    report = run_benchmark(config)
    _emit(dumps(report.to_dict()), args.out)
    if args.csv:
        _emit(csv_text(("method", "n", "replication", "metric"), report.curve_rows()), args.csv)
    return 0


def sensitivity_command(args) -> int:
    from .experiments.sensitivity import sensitivity_grid
    config = _read_json(args.config) if args.config else {}
    report = sensitivity_grid(config, args.l1, args.l2)
    _emit(csv_text(("lambda1", "lambda2", "mean_mse"), report.csv_rows()), args.out)
    if args.json:
        _emit(dumps(report.to_dict()), args.json)
    return 0


def _theory_inputs(args) -> TheoryInputs:
    return TheoryInputs(args.max_leaves, args.min_leaf, args.diameter, args.alpha,
                        args.lipschitz, args.p, args.delta)


def theory_command(args) -> int:
    if args.what in ("kn", "lambdas"):
        t = _theory_inputs(args)
        kn = compute_Kn(t)
        out = {"inputs": t.to_dict(), "Kn": kn}
        if args.what == "lambdas":
            out["lambda1"], out["lambda2"] = lambdas_from_Kn(kn, t.delta, t.lipschitz)
        _emit(dumps(out), args.out)
        return 0
    rows = []
    for m in args.m:
        up, pcm = example1_analytic(m, args.lam)
        mc = example1_montecarlo(m, args.lam, args.sims, seed=args.seed, sigma=args.sigma)
        rows.append({
            "m": m,
            "analytic_up": up,
            "analytic_pcm": pcm,
            "analytic_ratio": up / pcm if pcm > 0 else None,
            "mc_up": mc.state_a_up,
            "mc_pcm": mc.state_a_pcm,
            "mc_se_up": mc.state_a_se_up,
            "mc_se_pcm": mc.state_a_se_pcm,
            "mc_state_a_count": mc.n_state_a,
            "mc_mean_up": mc.mean_up,
            "mc_mean_pcm": mc.mean_pcm,
        })
    _emit(dumps({"lam": args.lam, "sims": args.sims, "seed": args.seed, "sigma": args.sigma, "rows": rows}),
          args.out)
    return 0


def convergence_command(args) -> int:
    from .experiments.convergence import coverage_experiment, consistency_experiment
    if args.what == "coverage":
        result = coverage_experiment(n=args.n, replications=args.replications, seed=args.seed)
    else:
        result = consistency_experiment(seeds=args.replications, seed=args.seed)
    _emit(dumps(result.to_dict()), args.out)
    return 0


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prescript",
                                     description="Uncertainty-penalized prescriptions from observational data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a learner on a CSV dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True, help="JSON mapping column -> role")
    p.add_argument("--model", required=True, choices=("cart", "rf", "ols", "ridge", "lasso"))
    p.add_argument("--params", help="JSON of learner and objective options")
    p.add_argument("--out")
    p.set_defaults(func=fit_command)

    p = sub.add_parser("prescribe", help="optimize decisions for covariate rows")
    p.add_argument("--model", required=True)
    p.add_argument("--x", help="CSV with the model's covariate columns")
    p.add_argument("--space", required=True, help="JSON with lower, upper and optional A, b")
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--grid-points", type=int, default=101)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=prescribe_command)

    p = sub.add_parser("benchmark", help="replicated method comparison")
    p.add_argument("--config")
    p.add_argument("--replications", type=int)
    p.add_argument("--out")
    p.add_argument("--csv", help="per-replication curves (method, n, replication, metric)")
    p.set_defaults(func=benchmark_command)

    p = sub.add_parser("sensitivity", help="mean dose error over a penalty grid")
    p.add_argument("--config")
    p.add_argument("--l1", type=_float_list, help="lambda1 values, e.g. '0 0.1 1 10 100'")
    p.add_argument("--l2", type=_float_list, help="lambda2 values")
    p.add_argument("--out", help="grid CSV")
    p.add_argument("--json", help="full report JSON")
    p.set_defaults(func=sensitivity_command)

    p = sub.add_parser("theory", help="covering constant, penalty weights and the selection example")
    p.add_argument("what", choices=("kn", "lambdas", "example1"))
    p.add_argument("--max-leaves", type=int, default=1)
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--diameter", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--lipschitz", type=float, default=1.0)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--m", type=int, nargs="+", default=[1, 4, 16, 64])
    p.add_argument("--lam", type=float, default=math.sqrt(2.0))
    p.add_argument("--sims", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", choices=("known", "empirical"), default="known")
    p.add_argument("--out")
    p.set_defaults(func=theory_command)

    p = sub.add_parser("convergence", help="bound coverage and regret decay on a 1-D problem")
    p.add_argument("what", choices=("coverage", "consistency"))
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=convergence_command)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "convergence" and args.replications is None:
        args.replications = 200 if args.what == "coverage" else 20
    try:
        return args.func(args)
    except (DataError, ValueError, FileNotFoundError) as err:
        print(f"prescript: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
