"""Residual MLP student with warmup+cosine LR, SWA, and collapse restarts.

Architecture: linear embedding of the (already one-hot/standardized) input
into width min(8*d, 128), two residual blocks whose inner width scales with
the row count as clamp(n/8, 32, 256), and a linear head to C logits.
Training is momentum SGD (0.9) on the mixed distillation objective with
label-smoothed hard targets, optional Gaussian feature jitter, stochastic
weight averaging over the final 20% of epochs, and a collapse detector
that restarts training at escalating dropout.  Everything is reproducible
from the seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .dataset import Dataset, split_indices
from .distill import (DistillTargets, LossConfig, mixed_gradient_mlp,
                      mixed_loss, normalized_entropy, softmax)

FORMAT_NAME = "distillforge-mlp"
FORMAT_VERSION = 1

BASE_DROPOUT = 0.1
MOMENTUM = 0.9

PARAM_KEYS = ("w_emb", "b_emb", "w1_0", "b1_0", "w2_0", "b2_0",
              "w1_1", "b1_1", "w2_1", "b2_1", "w_out", "b_out")


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 200
    warmup_fraction: float = 0.1
    peak_lr: float = 1e-3
    batch_size: int = 64
    swa_start_fraction: float = 0.8
    smoothing: float = 0.05
    augment_sigma: float = 0.05
    max_restarts: int = 3

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if not 0.0 < self.swa_start_fraction < 1.0:
            raise ValueError("swa_start_fraction must be in (0, 1)")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must be in [0, 1)")
        if self.augment_sigma < 0 or self.max_restarts < 0:
            raise ValueError("augment_sigma and max_restarts must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainSchedule":
        sched = cls(**obj)
        sched.validate()
        return sched


def embed_width(d_in: int) -> int:
    return min(8 * d_in, 128)


def hidden_width(n_rows: int) -> int:
    return int(np.clip(n_rows // 8, 32, 256))


def init_params(d_in: int, hidden: int, classes: int, rng) -> dict:
    """He-style init; residual branches start active but small."""
    e = embed_width(d_in)

    def w(fan_in, fan_out):
        return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))

    return {
        "w_emb": w(d_in, e), "b_emb": np.zeros(e),
        "w1_0": w(e, hidden), "b1_0": np.zeros(hidden),
        "w2_0": w(hidden, e) * 0.1, "b2_0": np.zeros(e),
        "w1_1": w(e, hidden), "b1_1": np.zeros(hidden),
        "w2_1": w(hidden, e) * 0.1, "b2_1": np.zeros(e),
        "w_out": rng.normal(0.0, math.sqrt(1.0 / e), size=(e, classes)),
        "b_out": np.zeros(classes),
    }


def _forward(params: dict, x: np.ndarray, masks=None):
    """Return (logits, cache); ``masks`` are inverted-dropout multipliers for
    the two block activations, or None at evaluation time."""
    h = x @ params["w_emb"] + params["b_emb"]
    cache = {"x": x, "h": [h]}
    acts = []
    dropped = []
    for i in range(2):
        a = h @ params[f"w1_{i}"] + params[f"b1_{i}"]
        r = np.maximum(a, 0.0)
        rd = r * masks[i] if masks is not None else r
        h = h + rd @ params[f"w2_{i}"] + params[f"b2_{i}"]
        acts.append(a)
        dropped.append(rd)
        cache["h"].append(h)
    cache["acts"] = acts
    cache["dropped"] = dropped
    logits = h @ params["w_out"] + params["b_out"]
    return logits, cache


def _backward(params: dict, cache: dict, dlogits: np.ndarray, masks=None) -> dict:
    grads = {}
    h_final = cache["h"][2]
    grads["w_out"] = h_final.T @ dlogits
    grads["b_out"] = dlogits.sum(axis=0)
    dh = dlogits @ params["w_out"].T
    for i in (1, 0):
        rd = cache["dropped"][i]
        grads[f"w2_{i}"] = rd.T @ dh
        grads[f"b2_{i}"] = dh.sum(axis=0)
        drd = dh @ params[f"w2_{i}"].T
        dr = drd * masks[i] if masks is not None else drd
        da = dr * (cache["acts"][i] > 0)
        h_in = cache["h"][i]
        grads[f"w1_{i}"] = h_in.T @ da
        grads[f"b1_{i}"] = da.sum(axis=0)
        dh = dh + da @ params[f"w1_{i}"].T
    grads["w_emb"] = cache["x"].T @ dh
    grads["b_emb"] = dh.sum(axis=0)
    return grads


def loss_and_gradients(params: dict, x: np.ndarray, targets: DistillTargets,
                       cfg: LossConfig, hard_targets=None, masks=None):
    """Batch-mean mixed loss and its parameter gradients (finite-difference
    checkable when ``masks`` is None)."""
    n = x.shape[0]
    logits, cache = _forward(params, x, masks)
    loss = mixed_loss(logits, targets, cfg, hard_targets) / n
    dlogits = mixed_gradient_mlp(logits, targets, cfg, hard_targets) / n
    grads = _backward(params, cache, dlogits, masks)
    return loss, grads


def smoothed_targets(labels: np.ndarray, class_count: int, eps: float) -> np.ndarray:
    out = np.full((labels.shape[0], class_count), eps / class_count)
    out[np.arange(labels.shape[0]), labels] += 1.0 - eps
    return out


def lr_at(step: int, total_steps: int, sched: TrainSchedule) -> float:
    """Linear warmup from zero, then cosine decay to zero at the last step."""
    warm = max(1, int(round(sched.warmup_fraction * total_steps)))
    if step < warm:
        return sched.peak_lr * step / warm
    span = max(1, total_steps - 1 - warm)
    t = min(1.0, (step - warm) / span)
    return sched.peak_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def collapse_check(val_probs: np.ndarray, threshold_entropy: float = 0.05,
                   min_argmax_diversity: float = 0.01) -> str:
    """Flag degenerate prediction distributions on a validation slice.

    Collapsed when predictions are both saturated (mean normalized entropy
    below ``threshold_entropy``) and argmax-degenerate (one class holding
    more than a 1 - min_argmax_diversity share), or when anything is
    non-finite.  Requiring both keeps early near-uniform models, whose
    argmaxes often all land on one side, from tripping the detector.
    """
    p = np.asarray(val_probs, dtype=np.float64)
    if not np.isfinite(p).all():
        return "collapsed"
    mean_h = float(normalized_entropy(p).mean())
    top_share = float(np.bincount(p.argmax(axis=1), minlength=p.shape[1]).max()) / p.shape[0]
    if mean_h < threshold_entropy and top_share > 1.0 - min_argmax_diversity:
        return "collapsed"
    return "healthy"


def restart_policy(current_dropout: float, attempt: int) -> float:
    """Escalate dropout by 1.5x per restart, capped at 0.5."""
    return min(0.5, current_dropout * 1.5)


class MlpModel:
    def __init__(self, params: dict, dims: dict, dropout: float, seed: int,
                 swa: bool, collapsed: bool = False, history: dict | None = None):
        self.params = params
        self.dims = dims
        self.dropout = dropout
        self.seed = seed
        self.swa = swa
        self.collapsed = collapsed
        self.history = history or {}

    def predict_logits(self, rows: np.ndarray) -> np.ndarray:
        x = np.asarray(rows, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dims["in"]:
            raise ValueError(f"expected (n, {self.dims['in']}) features, got {x.shape}")
        logits, _ = _forward(self.params, x)
        return logits

    def predict_proba(self, rows: np.ndarray) -> np.ndarray:
        return softmax(self.predict_logits(rows))

    def to_json_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "dims": dict(self.dims),
            "dropout": float(self.dropout),
            "weights": {k: self.params[k].tolist() for k in PARAM_KEYS},
            "swa": bool(self.swa),
            "collapsed": bool(self.collapsed),
            "seed": int(self.seed),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "MlpModel":
        if obj.get("format") != FORMAT_NAME:
            raise ValueError(f"not a {FORMAT_NAME} file: format={obj.get('format')!r}")
        if obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {obj.get('version')!r}")
        params = {k: np.asarray(obj["weights"][k], dtype=np.float64) for k in PARAM_KEYS}
        return cls(params, dict(obj["dims"]), float(obj["dropout"]),
                   int(obj["seed"]), bool(obj["swa"]), bool(obj.get("collapsed", False)))

    def save(self, path) -> None:
        from .ioutil import canonical_json_bytes
        with open(path, "wb") as fh:
            fh.write(canonical_json_bytes(self.to_json_dict()))

    @classmethod
    def load(cls, path) -> "MlpModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def _params_finite(params: dict) -> bool:
    return all(np.isfinite(v).all() for v in params.values())


def _train_once(x_tr, tg_tr, y_tr, x_val, tg_val, y_val, dims, dropout,
                sched: TrainSchedule, cfg: LossConfig, seed: int,
                record_snapshots: bool):
    """One full training attempt.  Returns a dict with final params, SWA
    params, per-epoch val losses, best healthy snapshot, and whether the
    collapse detector fired."""
    rng = np.random.default_rng(seed)
    params = init_params(dims["in"], dims["hidden"], dims["classes"], rng)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    n = x_tr.shape[0]
    steps_per_epoch = math.ceil(n / sched.batch_size)
    total_steps = sched.epochs * steps_per_epoch
    swa_start = math.floor(sched.epochs * sched.swa_start_fraction)
    jitter = sched.augment_sigma * x_tr.std(axis=0) if sched.augment_sigma > 0 else None

    swa_sum = None
    swa_count = 0
    snapshots = []
    val_losses = []
    best = None  # (val_loss, params copy)
    check_collapse = x_val.shape[0] >= 10

    step = 0
    for epoch in range(sched.epochs):
        perm = rng.permutation(n)
        for b0 in range(0, n, sched.batch_size):
            idx = perm[b0:b0 + sched.batch_size]
            xb = x_tr[idx]
            if jitter is not None:
                xb = xb + rng.standard_normal(xb.shape) * jitter
            masks = None
            if dropout > 0:
                keep = 1.0 - dropout
                masks = [
                    (rng.random((idx.size, dims["hidden"])) < keep) / keep
                    for _ in range(2)
                ]
            lr = lr_at(step, total_steps, sched)
            _, grads = loss_and_gradients(params, xb, tg_tr.take(idx), cfg,
                                          y_tr[idx], masks)
            for k in params:
                velocity[k] *= MOMENTUM
                velocity[k] -= lr * grads[k]
                params[k] += velocity[k]
            step += 1

        if not _params_finite(params):
            return {"collapsed": True, "best": best, "val_losses": val_losses}
        if x_val.shape[0]:
            logits, _ = _forward(params, x_val)
            vloss = mixed_loss(logits, tg_val, cfg, y_val) / x_val.shape[0]
            val_losses.append(vloss)
            if check_collapse and collapse_check(softmax(logits)) == "collapsed":
                return {"collapsed": True, "best": best, "val_losses": val_losses}
            if best is None or vloss < best[0]:
                best = (vloss, {k: v.copy() for k, v in params.items()})
        if epoch >= swa_start:
            if swa_sum is None:
                swa_sum = {k: v.copy() for k, v in params.items()}
            else:
                for k in params:
                    swa_sum[k] += params[k]
            swa_count += 1
            if record_snapshots:
                snapshots.append({k: v.copy() for k, v in params.items()})

    swa_params = {k: v / swa_count for k, v in swa_sum.items()} if swa_count else None
    return {
        "collapsed": False,
        "params": params,
        "swa_params": swa_params,
        "swa_count": swa_count,
        "val_losses": val_losses,
        "best": best,
        "snapshots": snapshots,
    }


def fit_mlp(train: Dataset, targets: DistillTargets, val_fraction: float = 0.15,
            sched: TrainSchedule | None = None, cfg: LossConfig | None = None,
            seed: int = 0, record_snapshots: bool = False) -> MlpModel:
    """Train the student; inputs must already be encoded (one-hot, z-scored).

    Restarts at 1.5x dropout (from 0.1, capped at 0.5) whenever the
    collapse detector fires on the validation slice, reseeding with
    seed+attempt.  After max_restarts the best pre-collapse snapshot comes
    back with ``collapsed=True`` instead of raising.
    """
    sched = sched or TrainSchedule()
    cfg = cfg or LossConfig()
    sched.validate()
    cfg.validate()
    x = np.asarray(train.features, dtype=np.float64)
    if x.shape[0] != targets.n_rows:
        raise ValueError("features do not align with targets")

    n = x.shape[0]
    if val_fraction > 0 and n >= 20:
        tr_idx, val_idx = split_indices(targets.hard_label, val_fraction, seed)
    else:
        tr_idx = np.arange(n)
        val_idx = np.empty(0, dtype=np.int64)

    dims = {
        "in": x.shape[1],
        "embed": embed_width(x.shape[1]),
        "hidden": hidden_width(n),
        "classes": targets.class_count,
    }
    y_smooth = smoothed_targets(targets.hard_label, targets.class_count, sched.smoothing)
    x_tr, x_val = x[tr_idx], x[val_idx]
    tg_tr, tg_val = targets.take(tr_idx), targets.take(val_idx)
    y_tr, y_val = y_smooth[tr_idx], y_smooth[val_idx]

    dropout = BASE_DROPOUT
    best_overall = None
    history = {"attempts": [], "dims": dims}
    for attempt in range(sched.max_restarts + 1):
        out = _train_once(x_tr, tg_tr, y_tr, x_val, tg_val, y_val, dims,
                          dropout, sched, cfg, seed + attempt, record_snapshots)
        history["attempts"].append({
            "dropout": dropout,
            "collapsed": out["collapsed"],
            "val_losses": out["val_losses"],
        })
        if out["best"] is not None:
            if best_overall is None or out["best"][0] < best_overall[0]:
                best_overall = out["best"]
        if not out["collapsed"]:
            use_swa = out["swa_params"] is not None
            params = out["swa_params"] if use_swa else out["params"]
            if record_snapshots:
                history["snapshots"] = out["snapshots"]
            return MlpModel(params, dims, dropout, seed, swa=use_swa,
                            collapsed=False, history=history)
        dropout = restart_policy(dropout, attempt + 1)

    # persistent collapse: surface the best healthy weights we ever saw
    if best_overall is not None:
        params = best_overall[1]
    else:
        rng = np.random.default_rng(seed + sched.max_restarts)
        params = init_params(dims["in"], dims["hidden"], dims["classes"], rng)
    return MlpModel(params, dims, dropout, seed, swa=False, collapsed=True,
                    history=history)
