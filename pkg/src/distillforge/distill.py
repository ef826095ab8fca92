"""Soft-label targets and the mixed distillation objective.

The objective blends a temperature-scaled KL term against teacher
probabilities with a cross-entropy term against ground-truth labels:

    L = alpha * sum_i w_i T_i^2 KL(p_i^(T_i) || q_i^(T_i))
      + (1 - alpha) * sum_i w_i CE(y_i, q_i)

Per-row temperatures grow linearly with the teacher's normalized entropy
and per-row weights follow a Gaussian bump over that same entropy, so
mid-confidence rows dominate and near-one-hot or near-uniform rows fade.
Two gradient routes are exposed: dense per-class gradients for neural
students, and a scalar (gradient, hessian) pair per row for boosted-tree
students, where the soft term collapses to a weighted squared error on the
teacher's logit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

PROB_CLIP = 1e-6


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.7
    t_min: float = 1.0
    t_max: float = 5.0
    mu: float = 0.7
    sigma: float = 0.2

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.t_min <= 0 or self.t_max < self.t_min:
            raise ValueError(f"need 0 < t_min <= t_max, got ({self.t_min}, {self.t_max})")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "t_min": self.t_min, "t_max": self.t_max,
                "mu": self.mu, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, obj: dict) -> "LossConfig":
        cfg = cls(**obj)
        cfg.validate()
        return cfg


def normalized_entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy over the last axis divided by ln(C), with 0*ln 0 = 0.

    One-hot rows give 0, uniform rows give 1, any simplex row lands in
    [0, 1] regardless of class count.
    """
    p = np.asarray(probs, dtype=np.float64)
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = -terms.sum(axis=-1)
    c = p.shape[-1]
    if c < 2:
        raise ValueError("entropy needs at least two classes")
    return h / np.log(c)


def adaptive_temperature(probs: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Map normalized entropy linearly onto [t_min, t_max].

    Confident rows get t_min, maximally uncertain rows get t_max exactly.
    """
    return cfg.t_min + (cfg.t_max - cfg.t_min) * normalized_entropy(probs)


def confidence_weight(probs: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Gaussian bump exp(-(H - mu)^2 / (2 sigma^2)) over normalized entropy."""
    h = normalized_entropy(probs)
    return np.exp(-((h - cfg.mu) ** 2) / (2.0 * cfg.sigma ** 2))


def _clip_probs(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)


@dataclass
class DistillTargets:
    """Per-row training targets: teacher probabilities with their logits,
    the adaptive temperature, the confidence weight, and the hard label."""

    soft_probs: np.ndarray     # (n, C)
    soft_logits: np.ndarray    # (n, C), log of clipped probabilities
    temperature: np.ndarray    # (n,)
    weight: np.ndarray         # (n,)
    hard_label: np.ndarray     # (n,) int64

    @property
    def n_rows(self) -> int:
        return self.soft_probs.shape[0]

    @property
    def class_count(self) -> int:
        return self.soft_probs.shape[1]

    def take(self, rows) -> "DistillTargets":
        rows = np.asarray(rows)
        return DistillTargets(
            self.soft_probs[rows], self.soft_logits[rows],
            self.temperature[rows], self.weight[rows], self.hard_label[rows],
        )

    def binary_logit(self) -> np.ndarray:
        """Scalar teacher logit ln(p1/p0) for two-class targets."""
        if self.class_count != 2:
            raise ValueError("binary logit requires exactly two classes")
        p = _clip_probs(self.soft_probs)
        return np.log(p[:, 1]) - np.log(p[:, 0])

    def ovr_logit(self, c: int) -> np.ndarray:
        """One-vs-rest teacher logit ln(p_c / (1 - p_c))."""
        p = _clip_probs(self.soft_probs[:, c])
        return np.log(p) - np.log(1.0 - p)

    def with_fixed_temperature(self, t: float) -> "DistillTargets":
        return replace(self, temperature=np.full(self.n_rows, float(t)))

    def with_uniform_weights(self) -> "DistillTargets":
        return replace(self, weight=np.ones(self.n_rows))


def build_targets(soft, labels: np.ndarray, cfg: LossConfig) -> DistillTargets:
    """Assemble targets from teacher probabilities (an out-of-fold label set
    or a plain (n, C) array) and ground-truth labels."""
    cfg.validate()
    probs = np.asarray(getattr(soft, "probs", soft), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2:
        raise ValueError("soft labels must be a 2-d probability array")
    if probs.shape[0] != labels.shape[0]:
        raise ValueError("soft labels do not align with hard labels")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError("hard label outside soft-label classes")
    log_p = np.log(_clip_probs(probs))
    return DistillTargets(
        soft_probs=probs,
        # centered per row; the shift cancels inside every softmax but keeps
        # the stored logits comparable across rows
        soft_logits=log_p - log_p.mean(axis=1, keepdims=True),
        temperature=adaptive_temperature(probs, cfg),
        weight=confidence_weight(probs, cfg),
        hard_label=labels,
    )


# ---------------------------------------------------------------------------
# dense (per-class) route for neural students
# ---------------------------------------------------------------------------

def _log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=-1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(z))


def _hard_target_rows(targets: DistillTargets, hard_targets) -> np.ndarray:
    if hard_targets is not None:
        return np.asarray(hard_targets, dtype=np.float64)
    onehot = np.zeros((targets.n_rows, targets.class_count))
    onehot[np.arange(targets.n_rows), targets.hard_label] = 1.0
    return onehot


def mixed_loss(student_logits: np.ndarray, targets: DistillTargets,
               cfg: LossConfig, hard_targets=None) -> float:
    """Total (summed, not averaged) mixed objective over the batch.

    ``hard_targets`` overrides the one-hot rows, e.g. with label smoothing.
    """
    z = np.asarray(student_logits, dtype=np.float64)
    t = targets.temperature[:, None]
    log_p = _log_softmax(targets.soft_logits / t)
    log_q = _log_softmax(z / t)
    p = np.exp(log_p)
    kl = (p * (log_p - log_q)).sum(axis=1)
    soft = targets.weight * targets.temperature ** 2 * kl

    y = _hard_target_rows(targets, hard_targets)
    ce = -(y * _log_softmax(z)).sum(axis=1)
    hard = targets.weight * ce

    return float((cfg.alpha * soft + (1.0 - cfg.alpha) * hard).sum())


def mixed_gradient_mlp(student_logits: np.ndarray, targets: DistillTargets,
                       cfg: LossConfig, hard_targets=None) -> np.ndarray:
    """d(mixed_loss)/d(logits), shape (n, C).

    Soft term per row: alpha * w * T * (softmax(z/T) - softmax(z_teacher/T));
    the T^2 prefactor cancels one 1/T from the chain rule.  Hard term:
    (1 - alpha) * w * (softmax(z) - y).
    """
    z = np.asarray(student_logits, dtype=np.float64)
    t = targets.temperature[:, None]
    w = targets.weight[:, None]
    q_t = softmax(z / t)
    p_t = softmax(targets.soft_logits / t)
    soft = w * t * (q_t - p_t)

    y = _hard_target_rows(targets, hard_targets)
    hard = w * (softmax(z) - y)

    return cfg.alpha * soft + (1.0 - cfg.alpha) * hard


# ---------------------------------------------------------------------------
# scalar route for boosted-tree students
# ---------------------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def tree_gradient_terms(raw_score: np.ndarray, soft_logit: np.ndarray,
                        temperature: np.ndarray, weight: np.ndarray,
                        hard: np.ndarray, alpha: float):
    """Gradient/hessian of the scalar-logit objective for one raw-score head.

    Soft term is the squared-error surrogate (w T^2 / 2)(F - z_t/T)^2 whose
    gradient is w T^2 (F - z_t/T) and hessian w T^2; hard term is the usual
    logistic pair.  Returns (g, h) arrays.
    """
    f = np.asarray(raw_score, dtype=np.float64)
    s = _sigmoid(f)
    g = alpha * weight * temperature ** 2 * (f - soft_logit / temperature) \
        + (1.0 - alpha) * weight * (s - hard)
    h = alpha * weight * temperature ** 2 + (1.0 - alpha) * weight * s * (1.0 - s)
    return g, h


def mixed_gradient_tree(raw_score: np.ndarray, targets: DistillTargets,
                        cfg: LossConfig):
    """Two-class (g, h) route: the teacher signal enters as ln(p1/p0)."""
    return tree_gradient_terms(
        raw_score, targets.binary_logit(), targets.temperature,
        targets.weight, targets.hard_label.astype(np.float64), cfg.alpha,
    )


def tree_objective_values(raw_score: np.ndarray, soft_logit: np.ndarray,
                          temperature: np.ndarray, weight: np.ndarray,
                          hard: np.ndarray, alpha: float) -> np.ndarray:
    """Per-row value of the scalar-logit objective, used for validation
    tracking during boosting."""
    f = np.asarray(raw_score, dtype=np.float64)
    soft = 0.5 * weight * temperature ** 2 * (f - soft_logit / temperature) ** 2
    # log(1 + exp(.)) in a stable form
    ce = np.logaddexp(0.0, f) - hard * f
    return alpha * soft + (1.0 - alpha) * weight * ce
