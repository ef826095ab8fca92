"""Evaluation: rank AUC, retention, calibration (ECE/Brier, temperature
scaling), and group-fairness gaps, bundled into a serializable report."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .distill import PROB_CLIP, softmax


def _midranks(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) with ties sharing their midrank.

    Half-integer midranks are exact in float64, which keeps the rank-sum
    AUC bit-identical to the pairwise definition.
    """
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0], dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    n = values.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC of scores against binary labels, midranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = _midranks(scores)
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def macro_auc(probs: np.ndarray, labels: np.ndarray) -> float:
    """Unweighted mean of one-vs-rest AUCs over classes present in labels."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    present = np.unique(labels)
    if present.size < 2:
        raise ValueError("macro AUC needs at least two classes present")
    if probs.shape[1] == 2:
        return auc(probs[:, 1], (labels == 1).astype(np.int64))
    vals = [auc(probs[:, c], (labels == c).astype(np.int64)) for c in present]
    return float(np.mean(vals))


def retention(student_auc: float, teacher_auc: float) -> float:
    """Student AUC as a percentage of teacher AUC."""
    if teacher_auc <= 0:
        raise ValueError("teacher AUC must be positive")
    return student_auc / teacher_auc * 100.0


def ece(probs: np.ndarray, labels: np.ndarray, bins: int = 15) -> float:
    """Expected calibration error with equal-width confidence bins.

    Confidence is the max class probability; empty bins contribute nothing.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2:
        raise ValueError("probs must be (n, C)")
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    idx = np.minimum((conf * bins).astype(np.int64), bins - 1)
    total = 0.0
    n = probs.shape[0]
    for b in range(bins):
        in_bin = idx == b
        n_b = int(in_bin.sum())
        if n_b == 0:
            continue
        total += (n_b / n) * abs(correct[in_bin].mean() - conf[in_bin].mean())
    return float(total)


def brier(probs: np.ndarray, labels: np.ndarray) -> float:
    """Full multiclass Brier score: mean squared distance to the one-hot row."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    onehot = np.zeros_like(probs)
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    return float(((probs - onehot) ** 2).sum(axis=1).mean())


def brier_binary(p1: np.ndarray, labels: np.ndarray) -> float:
    """Scalar binary variant mean (p1 - y)^2, the form binary tables report."""
    p1 = np.asarray(p1, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return float(((p1 - y) ** 2).mean())


T_LO = 0.05
T_HI = 20.0
T_TOL = 1e-3
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _nll(logits: np.ndarray, labels: np.ndarray, t: float) -> float:
    z = logits / t
    zmax = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
    picked = z[np.arange(labels.shape[0]), labels]
    return float((lse - picked).mean())


def fit_temperature(logits: np.ndarray, labels: np.ndarray) -> float:
    """Global temperature minimizing calibration-set cross-entropy.

    Coarse log-spaced scan over [0.05, 20] followed by golden-section
    refinement to |dT| <= 1e-3; never worse than T=1 by construction.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    grid = np.exp(np.linspace(math.log(T_LO), math.log(T_HI), 400))
    losses = [_nll(logits, labels, t) for t in grid]
    k = int(np.argmin(losses))
    lo = grid[max(0, k - 1)]
    hi = grid[min(len(grid) - 1, k + 1)]
    a, b = float(lo), float(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = _nll(logits, labels, c), _nll(logits, labels, d)
    while b - a > T_TOL:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = _nll(logits, labels, c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = _nll(logits, labels, d)
    t_star = 0.5 * (a + b)
    if _nll(logits, labels, t_star) > _nll(logits, labels, 1.0):
        return 1.0
    return float(t_star)


def scale_probs(probs: np.ndarray, temperature: float) -> np.ndarray:
    """Re-soften probabilities by dividing their log form by a temperature.

    Row-wise additive constants cancel in the softmax, so log of clipped
    probabilities stands in exactly for the original logits.
    """
    logits = np.log(np.clip(probs, PROB_CLIP, None))
    return softmax(logits / temperature)


def dp_diff(preds: np.ndarray, groups: np.ndarray) -> float:
    """Demographic-parity gap: spread of positive-decision rates over groups."""
    preds = np.asarray(preds)
    groups = np.asarray(groups)
    if preds.shape[0] == 0:
        raise ValueError("need at least one row")
    rates = [preds[groups == g].mean() for g in np.unique(groups)]
    return float(max(rates) - min(rates))


def eo_diff(preds: np.ndarray, labels: np.ndarray, groups: np.ndarray,
            mode: str = "opportunity", with_excluded: bool = False):
    """Equal-opportunity gap: spread of per-group true-positive rates.

    Groups without positive rows are excluded (and reported when
    ``with_excluded``).  mode="odds" additionally spreads false-positive
    rates and returns the larger gap, excluding groups without negatives
    from that side.
    """
    if mode not in ("opportunity", "odds"):
        raise ValueError(f"unknown eo mode {mode!r}")
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    tprs = []
    excluded = []
    for g in np.unique(groups):
        sel = (groups == g) & (labels == 1)
        if not sel.any():
            excluded.append(int(g))
            continue
        tprs.append(preds[sel].mean())
    if not tprs:
        raise ValueError("no group has positive labels")
    value = float(max(tprs) - min(tprs))
    if mode == "odds":
        fprs = []
        for g in np.unique(groups):
            sel = (groups == g) & (labels == 0)
            if not sel.any():
                if int(g) not in excluded:
                    excluded.append(int(g))
                continue
            fprs.append(preds[sel].mean())
        if fprs:
            value = max(value, float(max(fprs) - min(fprs)))
    if with_excluded:
        return value, sorted(excluded)
    return value


FAIRNESS_THRESHOLD = 0.5
ECE_BINS = 15


@dataclass
class EvalReport:
    auc: float
    ece: float
    brier: float
    ece_ts: float
    brier_ts: float
    fitted_temperature: float
    n_test: int
    retention_pct: float | None = None
    teacher_auc: float | None = None
    dp_diff: dict = field(default_factory=dict)
    eo_diff: dict = field(default_factory=dict)
    eo_excluded: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError(f"auc out of range: {self.auc}")
        if not 0.0 <= self.ece <= 1.0:
            raise ValueError(f"ece out of range: {self.ece}")
        if self.fitted_temperature <= 0:
            raise ValueError("fitted temperature must be positive")
        for name, v in list(self.dp_diff.items()) + list(self.eo_diff.items()):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"fairness gap {name!r} out of range: {v}")

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "ece": self.ece,
            "brier": self.brier,
            "ece_ts": self.ece_ts,
            "brier_ts": self.brier_ts,
            "fitted_temperature": self.fitted_temperature,
            "n_test": self.n_test,
            "retention_pct": self.retention_pct,
            "teacher_auc": self.teacher_auc,
            "dp_diff": dict(self.dp_diff),
            "eo_diff": dict(self.eo_diff),
            "eo_excluded": {k: list(v) for k, v in self.eo_excluded.items()},
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        return cls(**obj)


def evaluate(test_probs: np.ndarray, test: Dataset, calib_probs: np.ndarray,
             calib_labels: np.ndarray, teacher_auc: float | None = None,
             bins: int = ECE_BINS, threshold: float = FAIRNESS_THRESHOLD,
             eo_mode: str = "opportunity") -> EvalReport:
    """Fill an EvalReport from test predictions plus a disjoint calibration
    slice (used only to fit the temperature).

    Binary datasets use the scalar Brier form and compute fairness gaps per
    sensitive attribute at the decision threshold; multiclass reports
    macro-AUC and the full Brier form and skips fairness gaps.
    """
    test_probs = np.asarray(test_probs, dtype=np.float64)
    if test_probs.shape != (test.n_rows, test.class_count):
        raise ValueError(
            f"predictions shape {test_probs.shape} does not match test set "
            f"({test.n_rows}, {test.class_count})"
        )
    binary = test.class_count == 2

    t_star = fit_temperature(np.log(np.clip(calib_probs, PROB_CLIP, None)),
                             np.asarray(calib_labels))
    probs_ts = scale_probs(test_probs, t_star)

    auc_value = macro_auc(test_probs, test.labels)
    if binary:
        brier_value = brier_binary(test_probs[:, 1], test.labels)
        brier_ts_value = brier_binary(probs_ts[:, 1], test.labels)
    else:
        brier_value = brier(test_probs, test.labels)
        brier_ts_value = brier(probs_ts, test.labels)

    dp: dict = {}
    eo: dict = {}
    eo_skipped: dict = {}
    if binary:
        decisions = (test_probs[:, 1] >= threshold).astype(np.int64)
        for name, groups in test.sensitive.items():
            dp[name] = dp_diff(decisions, groups)
            value, excluded = eo_diff(decisions, test.labels, groups,
                                      mode=eo_mode, with_excluded=True)
            eo[name] = value
            if excluded:
                eo_skipped[name] = excluded

    report = EvalReport(
        auc=auc_value,
        ece=ece(test_probs, test.labels, bins),
        brier=brier_value,
        ece_ts=ece(probs_ts, test.labels, bins),
        brier_ts=brier_ts_value,
        fitted_temperature=t_star,
        n_test=test.n_rows,
        retention_pct=retention(auc_value, teacher_auc) if teacher_auc is not None else None,
        teacher_auc=teacher_auc,
        dp_diff=dp,
        eo_diff=eo,
        eo_excluded=eo_skipped,
        meta={
            "ece_bins": bins,
            "fairness_threshold": threshold,
            "eo_mode": eo_mode,
            "brier_form": "binary" if binary else "multiclass",
        },
    )
    return report


def aggregate_reports(reports: list[EvalReport]) -> dict:
    """Per-seed arrays plus mean and sample std for every numeric field."""
    if not reports:
        raise ValueError("nothing to aggregate")
    out: dict = {"n_seeds": len(reports), "per_seed": {}, "mean": {}, "std": {}}
    scalar_fields = ["auc", "ece", "brier", "ece_ts", "brier_ts", "fitted_temperature"]
    if all(r.retention_pct is not None for r in reports):
        scalar_fields += ["retention_pct", "teacher_auc"]
    for f in scalar_fields:
        vals = np.array([getattr(r, f) for r in reports], dtype=np.float64)
        out["per_seed"][f] = vals.tolist()
        out["mean"][f] = float(vals.mean())
        out["std"][f] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    for family in ("dp_diff", "eo_diff"):
        names = sorted({k for r in reports for k in getattr(r, family)})
        for name in names:
            vals = np.array([getattr(r, family).get(name, np.nan) for r in reports])
            key = f"{family}:{name}"
            out["per_seed"][key] = vals.tolist()
            out["mean"][key] = float(np.nanmean(vals))
            out["std"][key] = float(np.nanstd(vals, ddof=1)) if vals.size > 1 else 0.0
    return out
