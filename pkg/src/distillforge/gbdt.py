"""Gradient-boosted tree student trained on distillation targets.

Second-order boosting with exact greedy splits: every tree fits the Newton
step -g/h of the mixed objective at the current raw scores.  Binary
problems use a single raw-score head over the teacher logit ln(p1/p0);
multiclass runs one-vs-rest heads that share the per-row temperature and
weight (renormalized sigmoids at predict time; experimental).  Training
carves a stratified validation slice and stops after ``patience``
non-improving rounds, keeping the best iteration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import _kernels
from .dataset import DatasetError, split_indices
from .distill import (DistillTargets, LossConfig, PROB_CLIP, _sigmoid,
                      tree_gradient_terms, tree_objective_values)

FORMAT_NAME = "distillforge-gbdt"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class GbdtConfig:
    n_trees: int = 300
    max_depth: int = 6
    learning_rate: float = 0.1
    patience: int = 30
    min_leaf: int = 5
    reg_lambda: float = 1.0
    val_fraction: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("n_trees, max_depth and min_leaf must be positive")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be non-negative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "GbdtConfig":
        cfg = cls(**obj)
        cfg.validate()
        return cfg


class Tree:
    """One regression tree in flat-array form.

    Internal nodes carry (feature, threshold, left, right); leaves carry the
    Newton value and self-loop with feature -1 and threshold +inf so the
    traversal kernels need no special casing.
    """

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [_json_float(v) for v in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Tree":
        thr = [math.inf if v == "inf" else float(v) for v in obj["threshold"]]
        return cls(obj["feature"], thr, obj["left"], obj["right"], obj["value"])


def _json_float(v) -> float | str:
    v = float(v)
    return "inf" if math.isinf(v) else v


def _build_tree(x, grad, hess, cfg: GbdtConfig, leaf_of=None) -> Tree:
    """Grow one tree depth-first with exact splits from the kernel layer.

    When ``leaf_of`` is given it receives each training row's leaf value,
    which lets the boosting loop update raw scores without a traversal.
    """
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(np.inf)
        left.append(0)
        right.append(0)
        value.append(0.0)
        return len(feature) - 1

    lam = cfg.reg_lambda
    root = new_node()
    stack = [(root, np.arange(x.shape[0], dtype=np.int64), 0)]
    while stack:
        nid, rows, depth = stack.pop()

        def make_leaf():
            g = float(np.cumsum(grad[rows])[-1])
            h = float(np.cumsum(hess[rows])[-1])
            value[nid] = -g / (h + lam)
            left[nid] = nid
            right[nid] = nid
            if leaf_of is not None:
                leaf_of[rows] = value[nid]

        if depth >= cfg.max_depth or rows.size < 2 * cfg.min_leaf:
            make_leaf()
            continue
        xs = np.ascontiguousarray(x[rows])
        f, thr, gain = _kernels.best_split(xs, grad[rows], hess[rows],
                                           cfg.min_leaf, lam)
        if f < 0:
            make_leaf()
            continue
        col = x[rows, f]
        go_left = np.isnan(col) | (col < thr)
        lid = new_node()
        rid = new_node()
        feature[nid] = int(f)
        threshold[nid] = float(thr)
        left[nid] = lid
        right[nid] = rid
        stack.append((rid, rows[~go_left], depth + 1))
        stack.append((lid, rows[go_left], depth + 1))
    return Tree(feature, threshold, left, right, value)


def _pack_forest(trees: list[Tree]):
    """Pad per-tree arrays to a common node count for the kernels."""
    width = max(t.n_nodes for t in trees)
    n = len(trees)
    feat = np.full((n, width), -1, dtype=np.int64)
    thresh = np.full((n, width), np.inf, dtype=np.float64)
    left = np.zeros((n, width), dtype=np.int64)
    right = np.zeros((n, width), dtype=np.int64)
    value = np.zeros((n, width), dtype=np.float64)
    for i, t in enumerate(trees):
        m = t.n_nodes
        feat[i, :m] = t.feature
        thresh[i, :m] = t.threshold
        left[i, :m] = t.left
        right[i, :m] = t.right
        value[i, :m] = t.value
        # padding nodes self-loop, they are never reached from node 0
        left[i, m:] = np.arange(m, width)
        right[i, m:] = np.arange(m, width)
    return feat, thresh, left, right, value


def _forest_raw(trees: list[Tree], x: np.ndarray, max_depth: int) -> np.ndarray:
    if not trees:
        return np.zeros(x.shape[0], dtype=np.float64)
    feat, thresh, left, right, value = _pack_forest(trees)
    return _kernels.forest_raw(np.ascontiguousarray(x, dtype=np.float64),
                               feat, thresh, left, right, value, max_depth)


class BoostedModel:
    """Boosted forest plus the bookkeeping needed to reproduce and serialize it."""

    def __init__(self, config: GbdtConfig, class_count: int, n_features: int,
                 base_score, trees, best_iteration: int, val_history=None):
        self.config = config
        self.class_count = class_count
        self.n_features = n_features
        self.base_score = base_score          # scalar (binary) or list per class
        self.trees = trees                    # list[Tree] or list[list[Tree]]
        self.best_iteration = best_iteration  # trees used at predict time
        self.val_history = val_history or []

    @property
    def is_binary(self) -> bool:
        return self.class_count == 2

    def predict_raw(self, x: np.ndarray, head: int | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(
                f"expected (n, {self.n_features}) features, got {x.shape}"
            )
        if self.is_binary:
            active = self.trees[: self.best_iteration]
            return self.base_score + self.config.learning_rate * _forest_raw(
                active, x, self.config.max_depth
            )
        if head is None:
            raise ValueError("multiclass raw scores are per head, pass head=c")
        c = head
        active = self.trees[c][: self.best_iteration]
        return self.base_score[c] + self.config.learning_rate * _forest_raw(
            active, x, self.config.max_depth
        )

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.is_binary:
            p1 = _sigmoid(self.predict_raw(x))
            return np.column_stack([1.0 - p1, p1])
        scores = np.column_stack(
            [_sigmoid(self.predict_raw(x, head=c)) for c in range(self.class_count)]
        )
        return scores / scores.sum(axis=1, keepdims=True)

    def to_json_dict(self) -> dict:
        if self.is_binary:
            trees = [t.to_dict() for t in self.trees]
            base = float(self.base_score)
        else:
            trees = [[t.to_dict() for t in head] for head in self.trees]
            base = [float(b) for b in self.base_score]
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "class_count": self.class_count,
            "n_features": self.n_features,
            "base_score": base,
            "best_iteration": self.best_iteration,
            "val_history": [float(v) for v in self.val_history],
            "trees": trees,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "BoostedModel":
        if obj.get("format") != FORMAT_NAME:
            raise ValueError(f"not a {FORMAT_NAME} file: format={obj.get('format')!r}")
        if obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {obj.get('version')!r}")
        cfg = GbdtConfig.from_dict(obj["config"])
        if obj["class_count"] == 2:
            trees = [Tree.from_dict(t) for t in obj["trees"]]
            base = float(obj["base_score"])
        else:
            trees = [[Tree.from_dict(t) for t in head] for head in obj["trees"]]
            base = [float(b) for b in obj["base_score"]]
        return cls(cfg, obj["class_count"], obj["n_features"], base, trees,
                   obj["best_iteration"], obj.get("val_history"))

    def save(self, path) -> None:
        from .ioutil import canonical_json_bytes
        with open(path, "wb") as fh:
            fh.write(canonical_json_bytes(self.to_json_dict()))

    @classmethod
    def load(cls, path) -> "BoostedModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def _prior_logit(labels: np.ndarray, positive) -> float:
    p = float(np.mean(labels == positive))
    p = min(max(p, PROB_CLIP), 1.0 - PROB_CLIP)
    return math.log(p) - math.log(1.0 - p)


def fit_distilled(x: np.ndarray, targets: DistillTargets, loss_cfg: LossConfig,
                  cfg: GbdtConfig | None = None) -> BoostedModel:
    """Boost against the mixed objective carried by ``targets``.

    Rows with NaN features are allowed (they route left at every split).
    All-zero gradients at the start short-circuit to a base-score-only
    model rather than erroring.
    """
    cfg = cfg or GbdtConfig()
    cfg.validate()
    loss_cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != targets.n_rows:
        raise ValueError("features do not align with targets")
    if x.shape[0] < 2 * cfg.min_leaf:
        raise ValueError(f"need at least {2 * cfg.min_leaf} rows to boost")

    n = x.shape[0]
    if cfg.val_fraction > 0 and n >= 20:
        train_idx, val_idx = split_indices(targets.hard_label, cfg.val_fraction, cfg.seed)
    else:
        train_idx = np.arange(n)
        val_idx = np.empty(0, dtype=np.int64)
    tr = targets.take(train_idx)
    va = targets.take(val_idx)
    x_tr = np.ascontiguousarray(x[train_idx])
    x_va = np.ascontiguousarray(x[val_idx])

    heads = 1 if targets.class_count == 2 else targets.class_count
    if heads == 1:
        soft_tr = [tr.binary_logit()]
        soft_va = [va.binary_logit()]
        hard_tr = [tr.hard_label.astype(np.float64)]
        hard_va = [va.hard_label.astype(np.float64)]
        base = [_prior_logit(tr.hard_label, 1)]
    else:
        soft_tr = [tr.ovr_logit(c) for c in range(heads)]
        soft_va = [va.ovr_logit(c) for c in range(heads)]
        hard_tr = [(tr.hard_label == c).astype(np.float64) for c in range(heads)]
        hard_va = [(va.hard_label == c).astype(np.float64) for c in range(heads)]
        base = [_prior_logit(tr.hard_label, c) for c in range(heads)]

    raw_tr = [np.full(train_idx.size, b) for b in base]
    raw_va = [np.full(val_idx.size, b) for b in base]
    forests: list[list[Tree]] = [[] for _ in range(heads)]
    val_history: list[float] = []
    best_loss = np.inf
    best_iter = 0
    bad_rounds = 0

    for it in range(1, cfg.n_trees + 1):
        round_grads = []
        for c in range(heads):
            g, h = tree_gradient_terms(raw_tr[c], soft_tr[c], tr.temperature,
                                       tr.weight, hard_tr[c], loss_cfg.alpha)
            round_grads.append((g, h))
        if it == 1 and all(np.all(np.abs(g) < 1e-15) for g, _ in round_grads):
            break  # targets indistinguishable from the prior, keep base only
        for c in range(heads):
            g, h = round_grads[c]
            contrib = np.empty(train_idx.size)
            tree = _build_tree(x_tr, g, h, cfg, leaf_of=contrib)
            forests[c].append(tree)
            raw_tr[c] += cfg.learning_rate * contrib
            if val_idx.size:
                raw_va[c] += cfg.learning_rate * _forest_raw([tree], x_va, cfg.max_depth)
        if val_idx.size:
            per_head = [
                tree_objective_values(raw_va[c], soft_va[c], va.temperature,
                                      va.weight, hard_va[c], loss_cfg.alpha).mean()
                for c in range(heads)
            ]
            vloss = float(np.mean(per_head))
            val_history.append(vloss)
            if vloss < best_loss:
                best_loss = vloss
                best_iter = it
                bad_rounds = 0
            else:
                bad_rounds += 1
                if bad_rounds >= cfg.patience:
                    break
        else:
            best_iter = it

    trees = forests[0] if heads == 1 else forests
    base_score = base[0] if heads == 1 else base
    return BoostedModel(cfg, targets.class_count, x.shape[1], base_score,
                        trees, best_iter, val_history)


def fit_hard(x: np.ndarray, labels: np.ndarray, class_count: int,
             cfg: GbdtConfig | None = None) -> BoostedModel:
    """Plain hard-label training: the distilled path at alpha=0 with unit
    weights and unit temperatures, so both trainers share every code path."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    uniform = np.full((n, class_count), 1.0 / class_count)
    targets = DistillTargets(
        soft_probs=uniform,
        soft_logits=np.log(uniform),
        temperature=np.ones(n),
        weight=np.ones(n),
        hard_label=labels,
    )
    loss_cfg = LossConfig(alpha=0.0)
    return fit_distilled(x, targets, loss_cfg, cfg)
