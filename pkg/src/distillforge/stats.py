"""Wilcoxon signed-rank test for paired per-seed metric deltas.

Zero differences are dropped (the classic convention); ties among the
remaining absolute values share midranks.  For n <= 20 the two-sided
p-value comes from the exact conditional distribution of the positive-rank
sum, enumerated by dynamic programming over doubled midranks (doubling
makes every rank an integer).  Larger n uses the normal approximation with
the standard tie correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EXACT_LIMIT = 20


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float      # positive-rank sum W+
    p_value: float
    n_used: int           # pairs remaining after dropping zeros
    exact: bool


def _midranks_abs(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0])
    sv = values[order]
    i = 0
    n = values.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_p(doubled_ranks: np.ndarray, w_plus_doubled: int) -> float:
    """Two-sided tail mass of the doubled rank-sum under random signs.

    Counts sign assignments by subset-sum DP; the distribution is symmetric
    about S/2, so the two-sided p is the mass at or beyond the observed
    statistic on both ends (capped at 1 when the tails overlap).
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    lo = min(w_plus_doubled, total - w_plus_doubled)
    hi = max(w_plus_doubled, total - w_plus_doubled)
    denom = 2.0 ** len(doubled_ranks)
    p = (counts[:lo + 1].sum() + counts[hi:].sum()) / denom
    return float(min(1.0, p))


def wilcoxon_signed_rank(deltas: np.ndarray) -> WilcoxonResult:
    """Two-sided test of the hypothesis that paired deltas are symmetric
    about zero.  All-zero input returns p=1 rather than erroring."""
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.ndim != 1:
        raise ValueError("deltas must be one-dimensional")
    nonzero = deltas[deltas != 0.0]
    n = nonzero.shape[0]
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, n_used=0, exact=True)

    ranks = _midranks_abs(np.abs(nonzero))
    w_plus = float(ranks[nonzero > 0].sum())

    if n <= EXACT_LIMIT:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        w2 = int(round(2.0 * w_plus))
        p = _exact_p(doubled, w2)
        return WilcoxonResult(w_plus, p, n, exact=True)

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # tie correction: subtract sum(t^3 - t)/48 over tie groups
    _, tie_counts = np.unique(np.abs(nonzero), return_counts=True)
    var -= ((tie_counts.astype(np.float64) ** 3 - tie_counts).sum()) / 48.0
    if var <= 0:
        return WilcoxonResult(w_plus, 1.0, n, exact=False)
    z = (w_plus - mean) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return WilcoxonResult(w_plus, float(min(1.0, p)), n, exact=False)
