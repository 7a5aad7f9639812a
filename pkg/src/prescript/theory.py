"""Theory constants for penalized prescriptions and the two-state selection example.

The covering constant ``K_n`` and the high-probability deviation bound are
evaluated exactly as closed-form expressions. The selection example has
``m + 1`` actions: action 0 is deterministic, actions 1..m are Gaussian with
unit variance and ``m`` observations each. In state A action 0 costs 0 and
the noisy actions have mean 1; in state B action 0 costs 1 and the noisy
actions have mean 0. Both states are equally likely.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erfc

SIGMA_MODES = ("empirical", "known")
_CHUNK = 10_000


@dataclass(frozen=True)
class TheoryInputs:
    """Inputs of the covering-number constant.

    Attributes
    ----------
    max_leaves : int
        Number of regions the learner partitions the space into.
    min_leaf : int
        Lower bound on estimation samples per region.
    diameter : float
        Diameter of the decision space.
    alpha : float
        Lipschitz constant of the weights inside a region (0 for trees).
    lipschitz : float
        Lipschitz constant of the cost in (x, z).
    p : int
        Decision dimension.
    delta : float
        Failure probability in (0, 1).
    """

    max_leaves: int
    min_leaf: int
    diameter: float
    alpha: float
    lipschitz: float
    p: int
    delta: float = 0.05

    def __post_init__(self):
        if self.max_leaves < 1 or self.min_leaf < 1 or self.p < 1:
            raise ValueError("max_leaves, min_leaf and p must be positive integers")
        if self.diameter <= 0 or self.lipschitz < 0 or self.alpha < 0:
            raise ValueError("need diameter > 0, lipschitz >= 0 and alpha >= 0")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def compute_Kn(t: TheoryInputs) -> float:
    """Gamma * (9 D gamma (alpha (L D + 1 + sqrt 2) + L (sqrt 2 + 3)))^p."""
    r2 = math.sqrt(2.0)
    inner = 9.0 * t.diameter * t.min_leaf * (
        t.alpha * (t.lipschitz * t.diameter + 1.0 + r2) + t.lipschitz * (r2 + 3.0))
    return float(t.max_leaves * inner ** t.p)


def lambdas_from_Kn(Kn: float, delta: float, lipschitz: float) -> tuple[float, float]:
    return 2.0 * math.sqrt(math.log(2.0 * Kn / delta)), float(lipschitz)


def theory_lambdas(t: TheoryInputs) -> tuple[float, float]:
    """(lambda1, lambda2) = (2 sqrt(ln(2 K_n / delta)), L)."""
    return lambdas_from_Kn(compute_Kn(t), t.delta, t.lipschitz)


def generalization_bound(t: TheoryInputs, V, B):
    """Upper bound on mu - mu_hat holding with probability 1 - delta.

    ``V`` is the variance term sigma^2 sum w_i^2 and ``B`` the weighted
    distance; both may be arrays.
    """
    V = np.asarray(V, dtype=float)
    B = np.asarray(B, dtype=float)
    if np.any(V < 0) or np.any(B < 0):
        raise ValueError("V and B must be nonnegative")
    log_term = math.log(compute_Kn(t) / t.delta)
    out = 4.0 / (3.0 * t.min_leaf) * log_term + 2.0 * np.sqrt(V * log_term) + t.lipschitz * B
    return float(out) if out.ndim == 0 else out


def normal_cdf(x):
    """Standard normal CDF through erfc, accurate in both tails."""
    out = 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def example1_analytic(m: int, lam: float) -> tuple[float, float]:
    """State-A regrets (penalized, unpenalized) with the noise variance known."""
    if m < 1 or lam < 0:
        raise ValueError("need m >= 1 and lam >= 0")
    root = math.sqrt(m)
    shift = lam * math.sqrt(math.log(m))
    # 1 - Phi(a)^m = -expm1(m log1p(-Phi(-a))) keeps tiny regrets exact
    up = -math.expm1(m * math.log1p(-normal_cdf(-(root + shift))))
    pcm = -math.expm1(m * math.log1p(-normal_cdf(-root)))
    return up, pcm


@dataclass
class Example1Result:
    m: int
    lam: float
    n_sims: int
    seed: int
    sigma: str
    mean_up: float
    mean_pcm: float
    se_up: float
    se_pcm: float
    n_state_a: int
    state_a_up: float
    state_a_pcm: float
    state_a_se_up: float
    state_a_se_pcm: float

    def to_dict(self) -> dict:
        return asdict(self)


def binomial_se(p: float, n: int) -> float:
    """Standard error of a sample proportion with success probability p."""
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n > 0 else float("nan")


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return float("nan"), float("nan")
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else float("nan")
    return float(values.mean()), se


def _simulate_chunk(m: int, lam: float, size: int, sigma: str, rng: np.random.Generator):
    state_a = rng.uniform(size=size) < 0.5
    noisy_mean = np.where(state_a, 1.0, 0.0)
    det_cost = np.where(state_a, 0.0, 1.0)
    draws = rng.normal(size=(size, m, m)) + noisy_mean[:, None, None]
    means = draws.mean(axis=2)
    if sigma == "known":
        var = np.ones_like(means)
    elif m > 1:
        var = draws.var(axis=2, ddof=1)
    else:
        var = np.zeros_like(means)
    penalty = lam * np.sqrt(var * math.log(m) / m)
    # ties go to the deterministic action
    up_noisy = (means + penalty).min(axis=1) < det_cost
    pcm_noisy = means.min(axis=1) < det_cost
    # in state A every noisy choice costs 1 extra, in state B action 0 does
    regret_up = np.where(state_a, up_noisy, ~up_noisy).astype(float)
    regret_pcm = np.where(state_a, pcm_noisy, ~pcm_noisy).astype(float)
    return state_a, regret_up, regret_pcm


def example1_montecarlo(m: int, lam: float, n_sims: int, seed: int = 0,
                        sigma: str = "known") -> Example1Result:
    """Monte Carlo regrets of the penalized and unpenalized selection rules.

    Each chunk of simulations gets its own child of ``SeedSequence(seed)``,
    so the result depends only on (m, lam, n_sims, seed, sigma).
    ``sigma="known"`` penalizes with the true unit variance of the noisy
    actions (the setting of :func:`example1_analytic`); ``"empirical"``
    uses each action's sample variance instead.
    """
    if n_sims < 100:
        raise ValueError("n_sims must be at least 100")
    if m < 1 or lam < 0:
        raise ValueError("need m >= 1 and lam >= 0")
    if sigma not in SIGMA_MODES:
        raise ValueError(f"sigma must be one of {SIGMA_MODES}")
    n_chunks = -(-n_sims // _CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    states, ups, pcms = [], [], []
    for k, child in enumerate(children):
        size = min(_CHUNK, n_sims - k * _CHUNK)
        s, u, p = _simulate_chunk(m, lam, size, sigma, np.random.default_rng(child))
        states.append(s)
        ups.append(u)
        pcms.append(p)
    state_a = np.concatenate(states)
    up = np.concatenate(ups)
    pcm = np.concatenate(pcms)
    mean_up, se_up = _mean_se(up)
    mean_pcm, se_pcm = _mean_se(pcm)
    a_up, a_se_up = _mean_se(up[state_a])
    a_pcm, a_se_pcm = _mean_se(pcm[state_a])
    return Example1Result(m, float(lam), n_sims, seed, sigma, mean_up, mean_pcm, se_up, se_pcm,
                          int(state_a.sum()), a_up, a_pcm, a_se_up, a_se_pcm)
