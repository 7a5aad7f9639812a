"""Wilcoxon signed-rank test for paired comparisons."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

EXACT_MAX_PAIRS = 25


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    w_plus: float
    w_minus: float
    n: int
    p_value: float
    method: str
    alternative: str

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "w_plus": self.w_plus,
            "w_minus": self.w_minus,
            "n": self.n,
            "p_value": self.p_value,
            "method": self.method,
            "alternative": self.alternative,
        }


def _exact_upper_tail(doubled_ranks: np.ndarray, observed: int) -> tuple[float, float]:
    """P(W+ >= w) and P(W+ <= w) under random signs, by dynamic programming
    over doubled (integer) ranks so that tied mid-ranks are exact."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    probs = counts / counts.sum()
    return float(probs[observed:].sum()), float(probs[: observed + 1].sum())


def wilcoxon_signed_rank(differences, alternative: str = "two-sided", method: str = "auto") -> WilcoxonResult:
    """Signed-rank test of zero location for paired differences.

    Zero differences are dropped; ties get mid-ranks. ``alternative`` is
    "two-sided", "greater" (differences tend to be positive) or "less".
    The exact null distribution is used for at most 25 nonzero pairs,
    otherwise a normal approximation with continuity correction.
    The reported statistic is min(W+, W-).
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    diffs = np.asarray(differences, dtype=float)
    diffs = diffs[diffs != 0]
    n = diffs.size
    if n == 0:
        return WilcoxonResult(0.0, 0.0, 0.0, 0, 1.0, "degenerate", alternative)
    ranks = rankdata(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    w_minus = float(ranks[diffs < 0].sum())
    if method == "auto":
        method = "exact" if n <= EXACT_MAX_PAIRS else "normal"
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(int)
        upper, lower = _exact_upper_tail(doubled, int(round(2 * w_plus)))
        if alternative == "greater":
            p = upper
        elif alternative == "less":
            p = lower
        else:
            p = min(1.0, 2.0 * min(upper, lower))
    elif method == "normal":
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_counts ** 3 - tie_counts).sum() / 48.0
        sd = math.sqrt(var)
        if alternative == "greater":
            p = float(norm.sf((w_plus - mean - 0.5) / sd))
        elif alternative == "less":
            p = float(norm.cdf((w_plus - mean + 0.5) / sd))
        else:
            z = (abs(w_plus - mean) - 0.5) / sd
            p = float(min(1.0, 2.0 * norm.sf(max(z, 0.0))))
    else:
        raise ValueError(f"unknown method {method!r}")
    return WilcoxonResult(min(w_plus, w_minus), w_plus, w_minus, n, float(p), method, alternative)


def bonferroni(p_values) -> list[float]:
    p_values = list(p_values)
    m = len(p_values)
    return [min(1.0, p * m) for p in p_values]
