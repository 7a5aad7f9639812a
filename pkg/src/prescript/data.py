"""Observational dataset container, CSV ingestion, normalization and splitting."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

ROLES = ("covariate", "decision", "outcome", "ignore")


class DataError(ValueError):
    """Raised when a dataset cannot be built from the given inputs."""


def _as_matrix(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DataError(f"{name} must be a 2-D array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Scaler:
    """Per-column affine scaler. Constant columns keep mean 0 / std 1 (identity)."""

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def transform(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def inverse_transform(self, values) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "constant": self.constant.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "Scaler":
        return cls(
            mean=np.asarray(payload["mean"], dtype=float),
            std=np.asarray(payload["std"], dtype=float),
            constant=np.asarray(payload["constant"], dtype=bool),
        )


@dataclass(frozen=True)
class LoadReport:
    rows_read: int
    rows_dropped: int
    column_stats: dict

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_dropped": self.rows_dropped,
            "rows_kept": self.rows_read - self.rows_dropped,
            "column_stats": self.column_stats,
        }


@dataclass(frozen=True, eq=False)
class ObservationalDataset:
    """n records of (covariates, decision, outcome).

    The three blocks are stored as read-only float matrices of shapes
    (n, d), (n, p) and (n, q). ``d`` may be zero.
    """

    covariates: np.ndarray
    decisions: np.ndarray
    outcomes: np.ndarray
    covariate_names: tuple = ()
    decision_names: tuple = ()
    outcome_names: tuple = ()
    scaler: Optional[Scaler] = None
    report: Optional[LoadReport] = field(default=None, repr=False)

    def __post_init__(self):
        X = _as_matrix(self.covariates, "covariates")
        Z = _as_matrix(self.decisions, "decisions")
        Y = _as_matrix(self.outcomes, "outcomes")
        n = Z.shape[0]
        if X.shape[0] != n and X.size == 0:
            X = np.zeros((n, 0))
        if not (X.shape[0] == Y.shape[0] == n):
            raise DataError(
                f"row counts differ: covariates {X.shape[0]}, decisions {n}, outcomes {Y.shape[0]}"
            )
        if n < 1:
            raise DataError("dataset must contain at least one row")
        if Z.shape[1] < 1:
            raise DataError("at least one decision column is required")
        for name, block in (("covariates", X), ("decisions", Z), ("outcomes", Y)):
            if not np.all(np.isfinite(block)):
                raise DataError(f"{name} contain non-finite entries")
        for block in (X, Z, Y):
            block.setflags(write=False)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "decisions", Z)
        object.__setattr__(self, "outcomes", Y)
        object.__setattr__(
            self, "covariate_names", tuple(self.covariate_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        )
        object.__setattr__(
            self, "decision_names", tuple(self.decision_names) or tuple(f"z{j}" for j in range(Z.shape[1]))
        )
        object.__setattr__(
            self, "outcome_names", tuple(self.outcome_names) or tuple(f"y{j}" for j in range(Y.shape[1]))
        )
        if len(self.covariate_names) != X.shape[1] or len(self.decision_names) != Z.shape[1]:
            raise DataError("column name lists do not match block widths")

    @property
    def n(self) -> int:
        return self.decisions.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def p(self) -> int:
        return self.decisions.shape[1]

    @property
    def q(self) -> int:
        return self.outcomes.shape[1]

    @property
    def features(self) -> np.ndarray:
        """The (n, d+p) matrix of concatenated (X_i, Z_i)."""
        return np.hstack([self.covariates, self.decisions])

    def subset(self, rows) -> "ObservationalDataset":
        rows = np.asarray(rows, dtype=int)
        return replace(
            self,
            covariates=self.covariates[rows],
            decisions=self.decisions[rows],
            outcomes=self.outcomes[rows],
            report=None,
        )

    def with_outcomes(self, outcomes) -> "ObservationalDataset":
        outcomes = _as_matrix(outcomes, "outcomes")
        names = self.outcome_names if outcomes.shape[1] == self.q else ()
        return replace(self, outcomes=outcomes, outcome_names=names, report=None)


@dataclass(frozen=True)
class FeaturePoint:
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)).ravel())
        object.__setattr__(self, "z", np.atleast_1d(np.asarray(self.z, dtype=float)).ravel())

    @property
    def concat(self) -> np.ndarray:
        return np.concatenate([self.x, self.z])

    def distance(self, other: "FeaturePoint") -> float:
        return float(np.linalg.norm(self.concat - other.concat))


@dataclass(frozen=True)
class DecisionSpace:
    """Box ``lower <= z <= upper`` with optional linear constraints ``A z <= b``."""

    lower: np.ndarray
    upper: np.ndarray
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).ravel()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).ravel()
        if lo.shape != hi.shape:
            raise DataError("lower and upper bounds must have the same length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DataError("decision box must be bounded")
        if np.any(lo > hi):
            raise DataError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.A is not None:
            A = np.atleast_2d(np.asarray(self.A, dtype=float))
            b = np.atleast_1d(np.asarray(self.b, dtype=float)).ravel()
            if A.shape != (b.size, lo.size):
                raise DataError("constraint matrix must have shape (m, p) matching b")
            object.__setattr__(self, "A", A)
            object.__setattr__(self, "b", b)
        elif self.b is not None:
            raise DataError("b given without A")

    @classmethod
    def box(cls, lower, upper) -> "DecisionSpace":
        return cls(lower, upper)

    @property
    def p(self) -> int:
        return self.lower.size

    @property
    def has_constraints(self) -> bool:
        return self.A is not None and self.A.shape[0] > 0

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def constraint_slack(self, z) -> np.ndarray:
        """b - A z for each row (nonnegative when satisfied); works on (k, p) batches."""
        if not self.has_constraints:
            z = np.asarray(z, dtype=float)
            return np.zeros(z.shape[:-1] + (0,))
        return self.b - np.asarray(z, dtype=float) @ self.A.T

    def contains(self, z, tol: float = 1e-9) -> bool:
        z = np.asarray(z, dtype=float)
        if np.any(z < self.lower - tol) or np.any(z > self.upper + tol):
            return False
        return bool(np.all(self.constraint_slack(z) >= -tol))

    def to_dict(self) -> dict:
        out = {"lower": self.lower.tolist(), "upper": self.upper.tolist()}
        if self.has_constraints:
            out["A"] = self.A.tolist()
            out["b"] = self.b.tolist()
        return out

    @classmethod
    def from_dict(cls, payload: Mapping) -> "DecisionSpace":
        return cls(payload["lower"], payload["upper"], payload.get("A"), payload.get("b"))


def _parse_cell(text: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        return math.nan
    return value if math.isfinite(value) else math.nan


def _column_stats(values: np.ndarray) -> dict:
    if values.size == 0:
        return {"mean": None, "std": None, "min": None, "max": None}
    return {
        "mean": float(values.mean()),
        "std": float(values.std(ddof=1)) if values.size > 1 else 0.0,
        "min": float(values.min()),
        "max": float(values.max()),
    }


def load_dataset(path, schema: Mapping[str, str]) -> ObservationalDataset:
    """Read a CSV file into an :class:`ObservationalDataset`.

    ``schema`` maps column names to roles (covariate, decision, outcome,
    ignore); block column order follows the schema's order. Rows with a
    missing or non-numeric value in any non-ignored column are dropped and
    counted in ``dataset.report``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    if isinstance(schema, (str, Path)):
        schema = json.loads(Path(schema).read_text())
    for column, role in schema.items():
        if role not in ROLES:
            raise DataError(f"unknown role {role!r} for column {column!r}")

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty file: header row required") from None
        rows = [row for row in reader if row]

    position = {name: j for j, name in enumerate(header)}
    for column in schema:
        if column not in position:
            raise DataError(f"column not found: {column}")

    used = [c for c, role in schema.items() if role != "ignore"]
    table = np.full((len(rows), len(used)), np.nan)
    for i, row in enumerate(rows):
        for k, column in enumerate(used):
            j = position[column]
            table[i, k] = _parse_cell(row[j]) if j < len(row) else math.nan
    keep = np.all(np.isfinite(table), axis=1)
    table = table[keep]
    if table.shape[0] == 0:
        raise DataError("no usable rows after dropping incomplete records")

    def block(role):
        names = [c for c in used if schema[c] == role]
        cols = [used.index(c) for c in names]
        return names, table[:, cols]

    x_names, X = block("covariate")
    z_names, Z = block("decision")
    y_names, Y = block("outcome")
    if not z_names:
        raise DataError("schema must name at least one decision column")
    if not y_names:
        raise DataError("schema must name at least one outcome column")

    report = LoadReport(
        rows_read=len(rows),
        rows_dropped=int((~keep).sum()),
        column_stats={c: _column_stats(table[:, k]) for k, c in enumerate(used)},
    )
    return ObservationalDataset(
        covariates=X.reshape(table.shape[0], len(x_names)),
        decisions=Z,
        outcomes=Y,
        covariate_names=tuple(x_names),
        decision_names=tuple(z_names),
        outcome_names=tuple(y_names),
        report=report,
    )


def fit_scaler(values) -> Scaler:
    values = _as_matrix(values, "values")
    if values.shape[0] < 2:
        raise DataError("normalization needs at least two rows")
    mean = values.mean(axis=0)
    std = values.std(axis=0, ddof=1)
    constant = ~(std > 0)
    return Scaler(
        mean=np.where(constant, 0.0, mean),
        std=np.where(constant, 1.0, std),
        constant=constant,
    )


def normalize_covariates(ds: ObservationalDataset) -> ObservationalDataset:
    """Standardize covariate columns (sample std, ddof=1).

    Constant columns are left as they are and flagged in ``scaler.constant``.
    Decisions and outcomes are untouched.
    """
    scaler = fit_scaler(ds.covariates)
    return replace(ds, covariates=scaler.transform(ds.covariates), scaler=scaler, report=None)


def split_indices(n: int, validation_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < validation_fraction < 1.0:
        raise DataError("validation_fraction must lie in (0, 1)")
    n_val = int(np.rint(n * validation_fraction))
    if n < 2 or n_val < 1 or n_val > n - 1:
        raise DataError(f"a validation fraction of {validation_fraction} leaves an empty part for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_validation_split(
    ds: ObservationalDataset, validation_fraction: float, seed: int
) -> tuple[ObservationalDataset, ObservationalDataset]:
    """Deterministic disjoint split; rows keep their original relative order."""
    train_rows, val_rows = split_indices(ds.n, validation_fraction, seed)
    return ds.subset(train_rows), ds.subset(val_rows)


def dataset_from_arrays(X, Z, Y, **names) -> ObservationalDataset:
    Z = _as_matrix(Z, "decisions")
    X = np.zeros((Z.shape[0], 0)) if X is None else _as_matrix(X, "covariates")
    return ObservationalDataset(X, Z, Y, **names)


def write_csv(path, ds: ObservationalDataset, extra: Optional[Mapping[str, Sequence[float]]] = None) -> dict:
    """Write a dataset to CSV and return the matching column-role schema."""
    columns = list(ds.covariate_names) + list(ds.decision_names) + list(ds.outcome_names)
    table = np.hstack([ds.covariates, ds.decisions, ds.outcomes])
    schema = {c: "covariate" for c in ds.covariate_names}
    schema.update({c: "decision" for c in ds.decision_names})
    schema.update({c: "outcome" for c in ds.outcome_names})
    if extra:
        for name, col in extra.items():
            columns.append(name)
            table = np.hstack([table, np.asarray(col, dtype=float).reshape(-1, 1)])
            schema[name] = "ignore"
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in table:
            writer.writerow([repr(float(v)) for v in row])
    return schema
