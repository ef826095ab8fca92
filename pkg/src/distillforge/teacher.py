"""Probabilistic teachers and leakage-aware out-of-fold soft labeling.

A teacher here is anything that maps feature rows to probability vectors.
Two in-process reference teachers are provided (distance-weighted kNN and a
bagged decision-tree ensemble); externally produced labels enter through
the CSV import path.  Soft labels for the training set are always produced
out-of-fold: the teacher that labels fold k is fitted on everything except
fold k, and the audit verifies that bookkeeping after the fact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from .dataset import Dataset, FoldAssignment

SIMPLEX_TOL = 1e-6


class LeakageError(RuntimeError):
    """An out-of-fold guarantee was violated or cannot be established."""


@dataclass(frozen=True)
class TeacherSpec:
    kind: str                   # "knn" | "bagged_tree" | "file"
    params: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.kind not in ("knn", "bagged_tree", "file"):
            raise ValueError(f"unknown teacher kind {self.kind!r}")
        if self.kind == "file" and "path" not in self.params:
            raise ValueError("file teacher needs a 'path' parameter")

    @property
    def teacher_id(self) -> str:
        return self.kind

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, obj: dict) -> "TeacherSpec":
        spec = cls(obj["kind"], dict(obj.get("params", {})))
        spec.validate()
        return spec


def knn_teacher(train: Dataset, k: int | None = None):
    """Distance-weighted k-nearest-neighbour probability estimates.

    Features are z-scored with training statistics.  Votes are inverse
    distance 1/(d + 1e-8); the resulting per-class vote shares v_c are
    smoothed as (k v_c + 1) / (k + C) so no class ever gets probability
    zero.  Default k is ceil(sqrt(n)).
    """
    x = train.features
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot fit a teacher on zero rows")
    if k is None:
        k = int(math.ceil(math.sqrt(n)))
    k = max(1, min(int(k), n))
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    z = (x - mean) / std
    zz = (z * z).sum(axis=1)
    labels = train.labels
    c = train.class_count

    def predict(rows: np.ndarray) -> np.ndarray:
        q = (np.asarray(rows, dtype=np.float64) - mean) / std
        d2 = (q * q).sum(axis=1)[:, None] + zz[None, :] - 2.0 * (q @ z.T)
        dist = np.sqrt(np.maximum(d2, 0.0))
        near = np.argsort(dist, axis=1, kind="stable")[:, :k]
        w = 1.0 / (np.take_along_axis(dist, near, axis=1) + 1e-8)
        votes = np.zeros((rows.shape[0], c))
        neigh_labels = labels[near]
        for cls in range(c):
            votes[:, cls] = np.where(neigh_labels == cls, w, 0.0).sum(axis=1)
        shares = votes / votes.sum(axis=1, keepdims=True)
        return (k * shares + 1.0) / (k + c)

    return predict


def bagged_tree_teacher(train: Dataset, trees: int = 50, depth: int = 8, seed: int = 0,
                        min_leaf: int = 5):
    """Bootstrap-bagged decision trees with Laplace-smoothed leaf frequencies.

    Bag b draws indices rng.integers(0, n, n) from a generator seeded once
    with ``seed``, then fits a depth-limited tree.  A query's probability in
    one tree is (leaf count of class + 1) / (leaf size + C); the ensemble
    averages over trees.  depth=0 forces root-only stumps.  min_leaf keeps
    leaves from collapsing to single rows, where smoothing would wash every
    probability toward uniform.
    """
    x = train.features
    y = train.labels
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot fit a teacher on zero rows")
    c = train.class_count
    rng = np.random.default_rng(seed)
    fitted = []
    for b in range(trees):
        idx = rng.integers(0, n, size=n)
        tree_seed = int(rng.integers(0, 2**31 - 1))
        if depth > 0:
            clf = DecisionTreeClassifier(max_depth=depth, min_samples_leaf=min_leaf,
                                         random_state=tree_seed)
        else:
            clf = DecisionTreeClassifier(min_samples_split=n + 1, random_state=tree_seed)
        clf.fit(x[idx], y[idx])
        fitted.append(clf)

    def predict(rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        total = np.zeros((rows.shape[0], c))
        for clf in fitted:
            leaf = clf.apply(rows)
            leaf_n = clf.tree_.n_node_samples[leaf].astype(np.float64)
            frac = clf.predict_proba(rows)
            counts = np.zeros((rows.shape[0], c))
            counts[:, clf.classes_] = frac * leaf_n[:, None]
            total += (counts + 1.0) / (leaf_n[:, None] + c)
        return total / len(fitted)

    return predict


def fit_teacher(spec: TeacherSpec, train: Dataset, fold: int | None = None):
    """Fit an in-process teacher; file teachers only enter via import.

    Stochastic teachers get a per-fold seed of seed + 10007 * (fold + 1) so
    refitting the same fold reproduces the same ensemble.
    """
    spec.validate()
    if spec.kind == "knn":
        return knn_teacher(train, spec.params.get("k"))
    if spec.kind == "bagged_tree":
        seed = int(spec.params.get("seed", 0))
        if fold is not None:
            seed = seed + 10007 * (fold + 1)
        return bagged_tree_teacher(
            train,
            trees=int(spec.params.get("trees", 50)),
            depth=int(spec.params.get("depth", 8)),
            seed=seed,
            min_leaf=int(spec.params.get("min_leaf", 5)),
        )
    raise ValueError("file teachers are imported from soft-label CSVs, not fitted")


@dataclass
class SoftLabelSet:
    """Out-of-fold teacher probabilities with their leakage bookkeeping.

    ``seen_sets[k]`` holds the rows the fold-k teacher was fitted on.
    """

    probs: np.ndarray          # (n, C)
    fold_of: np.ndarray        # (n,) int64
    teacher_id: str
    seen_sets: list[np.ndarray]

    @property
    def n_rows(self) -> int:
        return self.probs.shape[0]

    @property
    def class_count(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class AuditReport:
    passed: bool
    offenders: tuple[int, ...]


def oof_label(ds: Dataset, folds: FoldAssignment, spec: TeacherSpec) -> SoftLabelSet:
    """Label every row with a teacher that never saw it.

    For each fold k a fresh teacher is fitted on the complement of fold k
    and predicts fold k only.
    """
    if folds.fold_of.shape[0] != ds.n_rows:
        raise ValueError("fold assignment does not align with dataset rows")
    probs = np.full((ds.n_rows, ds.class_count), np.nan)
    seen_sets: list[np.ndarray] = []
    for k in range(folds.k):
        hold = folds.rows_in_fold(k)
        fit_rows = folds.rows_outside_fold(k)
        try:
            predictor = fit_teacher(spec, ds.subset(fit_rows), fold=k)
            probs[hold] = predictor(ds.features[hold])
        except Exception as exc:
            raise RuntimeError(f"teacher {spec.teacher_id} failed on fold {k}: {exc}") from exc
        seen_sets.append(fit_rows)
    return SoftLabelSet(probs, folds.fold_of.copy(), spec.teacher_id, seen_sets)


def average_labels(sets: list[SoftLabelSet]) -> SoftLabelSet:
    """Equal-weight average over teachers labeling the same rows and folds."""
    if not sets:
        raise ValueError("need at least one soft-label set")
    first = sets[0]
    for other in sets[1:]:
        if other.probs.shape != first.probs.shape:
            raise ValueError("soft-label sets disagree on shape")
        if not np.array_equal(other.fold_of, first.fold_of):
            raise ValueError("soft-label sets disagree on fold assignment")
    arrays = [s.probs for s in sets]
    if all(np.array_equal(a, arrays[0]) for a in arrays[1:]):
        # mean of identical sets is exact; np.mean would wobble in the last
        # ulp for odd M and break duplicate-teacher idempotence
        probs = arrays[0].copy()
    else:
        probs = np.mean(arrays, axis=0)
    teacher_id = "+".join(s.teacher_id for s in sets)
    k = len(first.seen_sets)
    seen = [
        np.array(sorted(set().union(*(map(int, s.seen_sets[i]) for s in sets))), dtype=np.int64)
        for i in range(k)
    ]
    return SoftLabelSet(probs, first.fold_of.copy(), teacher_id, seen)


def leakage_audit(soft: SoftLabelSet) -> AuditReport:
    """Every labeled row must be absent from its own fold's fitting rows."""
    offenders = []
    for k, seen in enumerate(soft.seen_sets):
        seen_set = set(np.asarray(seen).tolist())
        for row in np.flatnonzero(soft.fold_of == k):
            if int(row) in seen_set:
                offenders.append(int(row))
    return AuditReport(passed=not offenders, offenders=tuple(sorted(offenders)))


# ---------------------------------------------------------------------------
# CSV wire format: row_id,fold_id,teacher_id,p0,...,p{C-1}
# ---------------------------------------------------------------------------

def export_soft_labels(soft: SoftLabelSet, path) -> None:
    """Write the set with 17 significant digits so probabilities round-trip."""
    c = soft.class_count
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row_id", "fold_id", "teacher_id"] + [f"p{j}" for j in range(c)])
        for i in range(soft.n_rows):
            writer.writerow(
                [i, int(soft.fold_of[i]), soft.teacher_id]
                + [format(float(p), ".16e") for p in soft.probs[i]]
            )


def import_soft_labels(path, folds: FoldAssignment, strict: bool = True) -> SoftLabelSet:
    """Read a soft-label CSV produced here or by a foreign teacher.

    Validates full row coverage, per-row simplex sums within 1e-6 (rows are
    renormalized afterwards), and agreement between the file's fold ids and
    ``folds``.  With strict=False the fold check is skipped, for callers
    that deliberately accept unaudited labels.
    """
    n = folds.fold_of.shape[0]
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LeakageError(f"{path}: soft-label file is empty") from None
        if header[:3] != ["row_id", "fold_id", "teacher_id"]:
            raise LeakageError(f"{path}: unexpected header {header[:3]}")
        prob_cols = header[3:]
        if prob_cols != [f"p{j}" for j in range(len(prob_cols))] or not prob_cols:
            raise LeakageError(f"{path}: malformed probability columns {prob_cols}")
        c = len(prob_cols)
        probs = np.full((n, c), np.nan)
        fold_of = np.full(n, -1, dtype=np.int64)
        teacher_id = None
        seen_rows = np.zeros(n, dtype=bool)
        for rec in reader:
            if not rec:
                continue
            i = int(rec[0])
            if not 0 <= i < n:
                raise LeakageError(f"{path}: row_id {i} outside dataset of {n} rows")
            if seen_rows[i]:
                raise LeakageError(f"{path}: duplicate row_id {i}")
            seen_rows[i] = True
            fold_of[i] = int(rec[1])
            teacher_id = rec[2] if teacher_id is None else teacher_id
            probs[i] = [float(v) for v in rec[3:]]

    missing = np.flatnonzero(~seen_rows)
    if missing.size:
        raise LeakageError(f"{path}: rows missing from soft-label file: {missing[:5].tolist()}")

    sums = probs.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > SIMPLEX_TOL)
    if bad.size:
        raise LeakageError(f"{path}: row {int(bad[0])} probabilities sum to {sums[bad[0]]:.8f}")
    if (probs < -SIMPLEX_TOL).any():
        raise LeakageError(f"{path}: negative probability entries")
    probs = np.clip(probs, 0.0, None)
    probs = probs / probs.sum(axis=1, keepdims=True)

    if strict:
        mismatch = np.flatnonzero(fold_of != folds.fold_of)
        if mismatch.size:
            i = int(mismatch[0])
            raise LeakageError(
                f"{path}: fold mismatch at row {i} "
                f"(file says {int(fold_of[i])}, split says {int(folds.fold_of[i])})"
            )

    seen_sets = [folds.rows_outside_fold(k) for k in range(folds.k)]
    return SoftLabelSet(probs, folds.fold_of.copy(), teacher_id or "file", seen_sets)
