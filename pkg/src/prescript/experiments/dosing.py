"""Synthetic dosing data with a known optimal dose per patient.

Covariates: standardized BMI (set to 0 when missing, with a missing
indicator), standardized age, two binary genotype markers, sex and a few
pure-noise columns. The optimal weekly dose is

    Z* = 25 + 10 bmi + 7.5 g1 + 5 g2 + 3 sin(2 age)

Historical doses follow N(30 + 15 bmi, 64); a negative draw is replaced by
U[0, 20] and a patient with missing BMI gets U[10, 50]. The observed
response is N(Z - Z*, 400) clipped to [-40, 40].
"""
from __future__ import annotations

import numpy as np

from ..data import DecisionSpace, ObservationalDataset

RESPONSE_CAP = 40.0
RESPONSE_VARIANCE = 400.0
DOSE_VARIANCE = 64.0
CONSTANT_DOSE = 35.0
DOSE_BOUNDS = (0.0, 100.0)


def optimal_dose(bmi, age, g1, g2) -> np.ndarray:
    return 25.0 + 10.0 * bmi + 7.5 * g1 + 5.0 * g2 + 3.0 * np.sin(2.0 * age)


def sample_patients(n: int, rng: np.random.Generator, missing_rate: float = 0.05,
                    n_noise: int = 4):
    """Return (covariates, names, true bmi, missing flags, optimal doses)."""
    bmi = rng.normal(0.0, 1.0, n)
    age = rng.normal(0.0, 1.0, n)
    g1 = (rng.uniform(size=n) < 0.35).astype(float)
    g2 = (rng.uniform(size=n) < 0.25).astype(float)
    sex = (rng.uniform(size=n) < 0.5).astype(float)
    noise = rng.normal(0.0, 1.0, size=(n, n_noise))
    missing = rng.uniform(size=n) < missing_rate
    observed_bmi = np.where(missing, 0.0, bmi)
    X = np.column_stack([observed_bmi, missing.astype(float), age, g1, g2, sex, noise])
    names = ("bmi", "bmi_missing", "age", "g1", "g2", "sex") + tuple(f"noise{k + 1}" for k in range(n_noise))
    return X, names, bmi, missing, optimal_dose(bmi, age, g1, g2)


def historical_doses(bmi, missing, rng: np.random.Generator) -> np.ndarray:
    n = bmi.size
    dose = rng.normal(30.0 + 15.0 * bmi, np.sqrt(DOSE_VARIANCE))
    negative = dose < 0
    dose[negative] = rng.uniform(0.0, 20.0, int(negative.sum()))
    dose[missing] = rng.uniform(10.0, 50.0, int(missing.sum()))
    return dose


def responses(dose, z_star, rng: np.random.Generator) -> np.ndarray:
    raw = rng.normal(dose - z_star, np.sqrt(RESPONSE_VARIANCE))
    return np.clip(raw, -RESPONSE_CAP, RESPONSE_CAP)


def generate_dosing_data(n_patients: int, mode: str = "synthetic", seed=0,
                         missing_rate: float = 0.05, n_noise: int = 4):
    """Return (dataset, optimal doses). Only the synthetic mode is generated here;
    real patient tables go through ``load_dataset``."""
    if mode != "synthetic":
        raise ValueError("only mode='synthetic' can be generated")
    if n_patients < 1:
        raise ValueError("n_patients must be positive")
    rng = np.random.default_rng(seed)
    X, names, bmi, missing, z_star = sample_patients(n_patients, rng, missing_rate, n_noise)
    Z = historical_doses(bmi, missing, rng)
    Y = responses(Z, z_star, rng)
    ds = ObservationalDataset(X, Z, Y, covariate_names=names, decision_names=("dose",),
                              outcome_names=("response",))
    return ds, z_star


def dose_space(bounds=DOSE_BOUNDS) -> DecisionSpace:
    return DecisionSpace.box([bounds[0]], [bounds[1]])
