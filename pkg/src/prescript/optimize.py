"""Solvers for the penalized prescription problem.

* trees: one convex problem per leaf (weights are constant on a leaf),
* forests: randomized-restart coordinate descent over a per-coordinate grid,
* linear models: projected gradient descent,
* a brute-force grid oracle used as the reference in tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog

from .data import DataError, DecisionSpace, ObservationalDataset
from .linear import LinearModel
from .objective import CostFunction, Decomposition, PenaltyConfig, objective_triplets
from .trees import ForestModel, TreeModel

GRID_GUARD = 10 ** 8
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class InfeasibleSpaceError(DataError):
    pass


@dataclass
class Prescription:
    z: np.ndarray
    value: float
    decomposition: Optional[Decomposition] = None
    leaf_id: Optional[int] = None
    restart: Optional[int] = None
    iterations: int = 0
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "z": [float(v) for v in self.z],
            "value": float(self.value),
            "decomposition": None if self.decomposition is None else self.decomposition.to_dict(),
            "leaf_id": self.leaf_id,
            "restart": self.restart,
            "iterations": self.iterations,
            "converged": self.converged,
            "diagnostics": self.diagnostics,
        }


def _feasible_mask(space: DecisionSpace, Z: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    if not space.has_constraints:
        return np.ones(Z.shape[0], dtype=bool)
    return np.all(space.constraint_slack(Z) >= -tol, axis=1)


def grid_oracle(objective: Callable[[np.ndarray], np.ndarray], space: DecisionSpace,
                resolution: int, chunk: int = 200_000) -> Prescription:
    """Exhaustive search over the product grid (endpoints included).

    ``objective`` maps a (k, p) batch of decisions to k values. Ties go to
    the lexicographically first grid point (first coordinate slowest).
    """
    p = space.p
    if resolution < 2 and np.any(space.upper > space.lower):
        raise ValueError("resolution must be at least 2")
    if float(resolution) ** p > GRID_GUARD:
        raise ValueError(f"grid of {resolution}^{p} points exceeds the guard of {GRID_GUARD}")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(space.lower, space.upper)]
    total = resolution ** p
    best_val, best_z = math.inf, None
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        digits = np.array(np.unravel_index(flat, (resolution,) * p)).T
        Z = np.column_stack([axes[j][digits[:, j]] for j in range(p)])
        Z = Z[_feasible_mask(space, Z)]
        if Z.shape[0] == 0:
            continue
        vals = np.asarray(objective(Z), dtype=float)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_z = float(vals[k]), Z[k].copy()
    if best_z is None:
        raise InfeasibleSpaceError("no grid point satisfies the constraints")
    return Prescription(best_z, best_val, iterations=total, diagnostics={"resolution": resolution})


def weight_objective(model, ds: ObservationalDataset, x, cost: Optional[CostFunction],
                     cfg: PenaltyConfig) -> Callable[[np.ndarray], np.ndarray]:
    """Batched penalized objective over decisions for a tree or forest at covariates x."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel() if ds.d else np.zeros(0)
    # costs linear in y only need the weighted outcome mean
    fused = cfg.mode == "squared_mean" or (cost is not None and cost.linear_in_outcome)
    stacked = model.stacked
    features, outcomes = ds.features, ds.outcomes

    def evaluate(Z, full=False):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        Q = np.hstack([np.broadcast_to(x, (Z.shape[0], x.size)), Z])
        if fused:
            sumsq, ybar, bias = stacked.aggregates(Q, features, outcomes, cfg.lambda2 != 0)
            if cfg.mode == "squared_mean":
                mean_term = ybar[:, 0] * ybar[:, 0]
            else:
                mean_term = cost(Z, ybar)
            root_v = np.sqrt(cfg.sigma2 * sumsq)
            values = mean_term + cfg.lambda1 * root_v + cfg.lambda2 * bias
            out = (values, mean_term, root_v, bias)
        else:
            out = objective_triplets(*model.weight_triplets(Q), Q, cost, ds, cfg)
        return out if full else out[0]

    return evaluate


def _decompose(evaluate, z) -> tuple[float, Decomposition]:
    vals, mean_term, root_v, bias = evaluate(z.reshape(1, -1), full=True)
    return float(vals[0]), Decomposition(float(mean_term[0]), float(root_v[0]), float(bias[0]))


def _coordinate_interval(space: DecisionSpace, Z: np.ndarray, j: int, lo: np.ndarray, hi: np.ndarray):
    """Feasible range of coordinate j for each row of Z with the others fixed."""
    a, b = lo.copy(), hi.copy()
    if space.has_constraints:
        for row, rhs in zip(space.A, space.b):
            coef = row[j]
            rest = rhs - Z @ row + coef * Z[:, j]
            if coef > 0:
                b = np.minimum(b, rest / coef)
            elif coef < 0:
                a = np.maximum(a, rest / coef)
    return a, b


class _LeafProblems:
    """All per-leaf problems at a fixed x, evaluated together."""

    def __init__(self, leaves, members, ds, x, cost, cfg):
        self.leaves = np.asarray(leaves, dtype=int)
        sizes = np.array([m.size for m in members])
        self.sizes = sizes
        self.owner = np.repeat(np.arange(len(members)), sizes)
        self.members = np.concatenate(members) if members else np.zeros(0, int)
        self.x = x
        self.d = ds.d
        self.cost, self.cfg = cost, cfg
        self.Y = ds.outcomes[self.members]
        self.F = ds.features[self.members]
        self.L = len(members)
        self.root_v = np.sqrt(cfg.sigma2 / sizes)
        if cfg.mode == "squared_mean":
            mean_y = np.bincount(self.owner, weights=self.Y[:, 0], minlength=self.L) / sizes
            self.const_mean = mean_y * mean_y
        else:
            self.const_mean = None

    def values(self, Z: np.ndarray, rows: Optional[np.ndarray] = None) -> np.ndarray:
        """Objective of leaf problem ``rows[k]`` at decision ``Z[k]``."""
        rows = np.arange(self.L) if rows is None else rows
        sel = np.isin(self.owner, rows)
        remap = np.full(self.L, -1)
        remap[rows] = np.arange(rows.size)
        owner = remap[self.owner[sel]]
        zz = Z[owner]
        if self.const_mean is None:
            mean = np.bincount(owner, weights=self.cost(zz, self.Y[sel]), minlength=rows.size) / self.sizes[rows]
        else:
            mean = self.const_mean[rows]
        out = mean + self.cfg.lambda1 * self.root_v[rows]
        if self.cfg.lambda2 != 0:
            q = np.hstack([np.broadcast_to(self.x, (zz.shape[0], self.x.size)), zz])
            dist = np.linalg.norm(self.F[sel] - q, axis=1)
            out = out + self.cfg.lambda2 * np.bincount(owner, weights=dist, minlength=rows.size) / self.sizes[rows]
        return out


def _golden_batch(fun, a, b, tol):
    """Vectorized golden-section minimization of fun over [a_k, b_k]; also
    checks both endpoints. Returns (argmin, value)."""
    a, b = a.copy(), b.copy()
    width = float(np.max(b - a)) if a.size else 0.0
    best_t = a.copy()
    best_v = fun(a)
    vb = fun(b)
    better = vb < best_v
    best_t[better], best_v[better] = b[better], vb[better]
    if width > tol:
        steps = int(math.ceil(math.log(tol / width) / math.log(_GOLDEN))) + 1
        c = b - _GOLDEN * (b - a)
        e = a + _GOLDEN * (b - a)
        fc, fe = fun(c), fun(e)
        for _ in range(steps):
            left = fc <= fe
            b = np.where(left, e, b)
            a = np.where(left, a, c)
            new_c = np.where(left, b - _GOLDEN * (b - a), e)
            new_e = np.where(left, c, a + _GOLDEN * (b - a))
            f_new = fun(np.where(left, new_c, new_e))
            fc, fe = np.where(left, f_new, fe), np.where(left, fc, f_new)
            c, e = new_c, new_e
        mid = np.clip(0.5 * (a + b), a, b)
        vm = fun(mid)
        better = vm < best_v
        best_t[better], best_v[better] = mid[better], vm[better]
    return best_t, best_v


def _leaf_start(space: DecisionSpace, lo: np.ndarray, hi: np.ndarray) -> Optional[np.ndarray]:
    z = 0.5 * (lo + hi)
    if space.contains(z, tol=0.0):
        return z
    res = linprog(np.zeros(space.p), A_ub=space.A, b_ub=space.b,
                  bounds=list(zip(lo, hi)), method="highs")
    return res.x if res.status == 0 else None


def optimize_tree(model: TreeModel, ds: ObservationalDataset, x, cost: Optional[CostFunction],
                  cfg: PenaltyConfig, space: DecisionSpace, tol: float = 1e-10,
                  max_cycles: int = 200) -> Prescription:
    """Solve the penalized problem separately on every leaf compatible with x
    and return the best leaf solution.

    On a leaf the weights are fixed, so the variance term is constant and the
    bias term convex; each leaf problem is solved by golden-section search
    (cyclic per coordinate when p >= 2). When the leaf objective does not
    depend on z the midpoint of the optimal plateau is returned.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel() if ds.d else np.zeros(0)
    d, p = ds.d, space.p
    lo_all, hi_all = model.leaf_boxes()
    ok = np.all((lo_all[:, :d] < x) & (x <= hi_all[:, :d]), axis=1)
    zlo = np.maximum(lo_all[:, d:], space.lower)
    zhi = np.minimum(hi_all[:, d:], space.upper)
    open_lo = lo_all[:, d:] >= space.lower
    ok &= np.all(zlo <= zhi, axis=1) & np.all(~open_lo | (zlo < zhi), axis=1)
    leaves = np.flatnonzero(ok)

    starts, kept = [], []
    for leaf in leaves:
        z0 = _leaf_start(space, zlo[leaf], zhi[leaf]) if space.has_constraints else 0.5 * (zlo[leaf] + zhi[leaf])
        if z0 is not None:
            starts.append(z0)
            kept.append(leaf)
    if not kept:
        raise AssertionError("no leaf intersects the feasible decision set")
    leaves = np.asarray(kept, dtype=int)
    lo, hi = zlo[leaves], zhi[leaves]
    Z = np.array(starts, dtype=float).reshape(len(kept), p)
    problems = _LeafProblems(leaves, [model.leaf_indices[j] for j in leaves], ds, x, cost, cfg)

    z_free = cfg.mode == "squared_mean" or bool(getattr(cost, "z_free", False))
    plateau = z_free and cfg.lambda2 == 0
    cycles = 0
    if plateau:
        vals = problems.values(Z)
    else:
        vals = problems.values(Z)
        for cycles in range(1, max_cycles + 1):
            before = vals.copy()
            for j in range(p):
                a, b = _coordinate_interval(space, Z, j, lo[:, j], hi[:, j])
                a = np.minimum(a, Z[:, j])
                b = np.maximum(b, Z[:, j])

                def along(t, j=j):
                    trial = Z.copy()
                    trial[:, j] = t
                    return problems.values(trial)

                t, v = _golden_batch(along, a, b, tol * max(1.0, float(np.max(np.abs(b - a)))))
                improve = v < vals
                Z[improve, j] = t[improve]
                vals = np.where(improve, v, vals)
            if p == 1 or np.all(before - vals <= 1e-13 * (1.0 + np.abs(vals))):
                break

    # points on an open lower face belong to the neighbouring leaf
    lower_face = open_lo[leaves] & (Z <= lo)
    Z = np.where(lower_face, np.nextafter(lo, np.inf), Z)
    vals = problems.values(Z)

    k = int(np.argmin(vals))
    z_star = Z[k].copy()
    diagnostics = {"leaves_solved": int(leaves.size)}
    if plateau:
        tied = np.flatnonzero(vals <= vals[k] + 1e-12 * (1.0 + abs(vals[k])))
        volume = np.prod(np.maximum(hi[tied] - lo[tied], 0.0), axis=1)
        centers = 0.5 * (lo[tied] + hi[tied])
        if volume.sum() > 0:
            z_star = (volume[:, None] * centers).sum(axis=0) / volume.sum()
        else:
            z_star = centers.mean(axis=0)
        diagnostics["plateau_leaves"] = int(tied.size)
    evaluate = weight_objective(model, ds, x, cost, cfg)
    value, decomposition = _decompose(evaluate, z_star)
    leaf_id = int(model.apply(np.concatenate([x, z_star]).reshape(1, -1))[0])
    return Prescription(z_star, value, decomposition, leaf_id=leaf_id, iterations=cycles,
                        converged=True, diagnostics=diagnostics)


def _random_feasible(space: DecisionSpace, rng: np.random.Generator, tries: int = 1000) -> np.ndarray:
    for _ in range(tries):
        z = rng.uniform(space.lower, space.upper)
        if space.contains(z, tol=0.0):
            return z
    z0 = _leaf_start(space, space.lower, space.upper)
    if z0 is None:
        raise InfeasibleSpaceError("decision space is empty")
    return z0


def optimize_forest(model, ds: ObservationalDataset, x, cost: Optional[CostFunction],
                    cfg: PenaltyConfig, space: DecisionSpace, restarts: int = 5,
                    grid_points_per_coord: int = 101, seed: int = 0,
                    max_cycles: int = 100, improve_tol: float = 1e-9) -> Prescription:
    """Coordinate-descent heuristic with random restarts.

    Each coordinate move evaluates the objective on a uniform grid over the
    coordinate's feasible interval (plus the current value) and takes the best.
    """
    if restarts < 1 or grid_points_per_coord < 2:
        raise ValueError("need restarts >= 1 and grid_points_per_coord >= 2")
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel() if ds.d else np.zeros(0)
    evaluate = weight_objective(model, ds, x, cost, cfg)
    rng = np.random.default_rng(seed)
    p = space.p
    best = None
    for r in range(restarts):
        z = _random_feasible(space, rng)
        val = float(evaluate(z.reshape(1, -1))[0])
        converged = False
        cycles = 0
        for cycles in range(1, max_cycles + 1):
            moved = False
            for j in range(p):
                a, b = _coordinate_interval(space, z.reshape(1, -1), j, space.lower[j:j + 1], space.upper[j:j + 1])
                grid = np.append(np.linspace(a[0], b[0], grid_points_per_coord), z[j])
                trial = np.repeat(z.reshape(1, -1), grid.size, axis=0)
                trial[:, j] = grid
                vals = evaluate(trial)
                k = int(np.argmin(vals))
                if vals[k] < val - improve_tol:
                    z, val, moved = trial[k].copy(), float(vals[k]), True
            if not moved:
                converged = True
                break
        if best is None or val < best[1]:
            best = (z, val, r, cycles, converged)
    z, _, r, cycles, converged = best
    value, decomposition = _decompose(evaluate, z)
    return Prescription(z, value, decomposition, restart=r, iterations=cycles, converged=converged,
                        diagnostics={"restarts": restarts, "grid_points_per_coord": grid_points_per_coord})


def _project(space: DecisionSpace, z: np.ndarray, iters: int = 500) -> np.ndarray:
    """Euclidean projection onto the box intersected with the halfspaces (Dykstra)."""
    box = np.clip(z, space.lower, space.upper)
    if not space.has_constraints or space.contains(box, tol=0.0):
        return box
    sets = [lambda v: np.clip(v, space.lower, space.upper)]
    for row, rhs in zip(space.A, space.b):
        norm2 = float(row @ row)
        if norm2 == 0:
            continue
        sets.append(lambda v, row=row, rhs=rhs, norm2=norm2: v - max(0.0, (row @ v - rhs) / norm2) * row)
    incr = [np.zeros_like(z) for _ in sets]
    v = z.copy()
    for _ in range(iters):
        prev = v
        for k, proj in enumerate(sets):
            y = proj(v + incr[k])
            incr[k] = v + incr[k] - y
            v = y
        if np.max(np.abs(v - prev)) < 1e-14:
            break
    return v


def _repair(space: DecisionSpace, z: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Bisect from z toward a feasible anchor until every constraint holds."""
    z = np.clip(z, space.lower, space.upper)
    if space.contains(z, tol=0.0):
        return z
    lo_t, hi_t = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo_t + hi_t)
        if space.contains(z + mid * (anchor - z), tol=0.0):
            hi_t = mid
        else:
            lo_t = mid
    return z + hi_t * (anchor - z)


def optimize_linear(model: LinearModel, x, lambda1: float, space: DecisionSpace,
                    mode: str = "plain", max_iter: int = 10_000, tol: float = 1e-12) -> Prescription:
    """Minimize prediction + lambda1 * sigma * sqrt(v^T M v) over the space
    by projected gradient descent with backtracking."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel() if x is not None else np.zeros(0)
    d = x.size
    anchor = space.center
    if space.has_constraints and not space.contains(anchor, tol=0.0):
        anchor = _leaf_start(space, space.lower, space.upper)
        if anchor is None:
            raise InfeasibleSpaceError("decision space is empty")
    beta_z = model.coef[d:]
    scale = lambda1 * model.sigma

    def f(z):
        return float(model.objective(np.concatenate([x, z]).reshape(1, -1), lambda1, mode)[0])

    def grad(z):
        v = np.concatenate([x, z])
        mean = float(v @ model.coef)
        g = 2.0 * mean * beta_z if mode == "squared_mean" else beta_z.copy()
        if scale:
            Mv = model.M @ v
            quad = float(v @ Mv)
            if quad > 0:
                g = g + scale * Mv[d:] / math.sqrt(quad)
        return g

    z = anchor.copy()
    val = f(z)
    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = grad(z)
        while True:
            cand = _project(space, z - step * g)
            diff = cand - z
            cand_val = f(cand)
            if cand_val <= val + g @ diff + (diff @ diff) / (2.0 * step) + 1e-15 * abs(val) or step < 1e-20:
                break
            step *= 0.5
        moved = float(np.max(np.abs(diff))) if diff.size else 0.0
        if cand_val >= val:
            # the sufficient-decrease test passed without any decrease, so
            # the step is below float resolution of the objective
            converged = True
            break
        z, val = cand, cand_val
        if moved <= tol * max(1.0, float(np.max(np.abs(z)))):
            converged = True
            break
        step *= 2.0
    z = _repair(space, z, anchor)
    v = np.concatenate([x, z])
    mean = float(v @ model.coef)
    root_v = model.sigma * math.sqrt(max(float(v @ model.M @ v), 0.0))
    value = f(z)
    decomposition = Decomposition(mean * mean if mode == "squared_mean" else mean, root_v, 0.0)
    return Prescription(z, value, decomposition, iterations=it, converged=converged)


def prescribe(model, ds: Optional[ObservationalDataset], x, cost, cfg: PenaltyConfig,
              space: DecisionSpace, **kwargs) -> Prescription:
    """Dispatch on the learner family."""
    if isinstance(model, LinearModel):
        return optimize_linear(model, x, cfg.lambda1, space, mode=cfg.mode)
    if isinstance(model, ForestModel):
        return optimize_forest(model, ds, x, cost, cfg, space, **kwargs)
    if isinstance(model, TreeModel):
        return optimize_tree(model, ds, x, cost, cfg, space)
    raise TypeError(f"unsupported model type {type(model).__name__}")
