"""Hard-label reference models: L2 logistic regression and the hard GBDT.

These baselines never see soft labels; their fit APIs take only a Dataset.
The hard-label GBDT lives in the student module (``fit_hard``) so it shares
every code path with the distilled trainer; it is re-exported here for
callers thinking in baseline terms.
"""

from __future__ import annotations

import json
import warnings

import numpy as np
from scipy.optimize import minimize

from .dataset import Dataset
from .distill import _sigmoid, softmax
from .gbdt import fit_hard  # noqa: F401  (baseline alias)

FORMAT_NAME = "distillforge-logreg"
FORMAT_VERSION = 1


class LogRegModel:
    """Linear scorer over internally z-scored features.

    Binary models keep one weight vector and use a sigmoid; multiclass
    keeps a (d, C) matrix and uses a softmax.  ``converged`` is False when
    the optimizer stopped on max_iter rather than the gradient tolerance.
    """

    def __init__(self, weights, bias, mean, std, l2, class_count, converged=True):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.l2 = float(l2)
        self.class_count = int(class_count)
        self.converged = bool(converged)

    def _scores(self, rows: np.ndarray) -> np.ndarray:
        x = np.asarray(rows, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.mean.shape[0]:
            raise ValueError(f"expected (n, {self.mean.shape[0]}) features, got {x.shape}")
        z = (x - self.mean) / self.std
        return z @ self.weights + self.bias

    def predict_proba(self, rows: np.ndarray) -> np.ndarray:
        s = self._scores(rows)
        if self.class_count == 2:
            p1 = _sigmoid(s)
            return np.column_stack([1.0 - p1, p1])
        return softmax(s)

    def to_json_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "class_count": self.class_count,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist() if self.bias.ndim else float(self.bias),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "l2": self.l2,
            "converged": self.converged,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "LogRegModel":
        if obj.get("format") != FORMAT_NAME:
            raise ValueError(f"not a {FORMAT_NAME} file: format={obj.get('format')!r}")
        if obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {obj.get('version')!r}")
        return cls(obj["weights"], obj["bias"], obj["mean"], obj["std"],
                   obj["l2"], obj["class_count"], obj["converged"])

    def save(self, path) -> None:
        from .ioutil import canonical_json_bytes
        with open(path, "wb") as fh:
            fh.write(canonical_json_bytes(self.to_json_dict()))

    @classmethod
    def load(cls, path) -> "LogRegModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def _binary_objective(theta, z, y, l2):
    d = z.shape[1]
    w, b = theta[:d], theta[d]
    s = z @ w + b
    # sum CE in stable logaddexp form; bias is unpenalized
    loss = float(np.logaddexp(0.0, s).sum() - (y * s).sum() + 0.5 * l2 * (w @ w))
    p = _sigmoid(s)
    gw = z.T @ (p - y) + l2 * w
    gb = float((p - y).sum())
    return loss, np.concatenate([gw, [gb]])


def _multi_objective(theta, z, y_onehot, l2):
    d = z.shape[1]
    c = y_onehot.shape[1]
    w = theta[: d * c].reshape(d, c)
    b = theta[d * c:]
    s = z @ w + b
    shifted = s - s.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + s.max(axis=1)
    loss = float(lse.sum() - (y_onehot * s).sum() + 0.5 * l2 * (w * w).sum())
    p = softmax(s)
    gw = z.T @ (p - y_onehot) + l2 * w
    gb = (p - y_onehot).sum(axis=0)
    return loss, np.concatenate([gw.ravel(), gb])


def fit_logreg(train: Dataset, l2: float = 1.0, max_iter: int = 500,
               tol: float = 1e-6) -> LogRegModel:
    """Full-batch L-BFGS on summed cross-entropy with an L2 penalty on the
    weights (not the bias).  Features are z-scored on training statistics.
    Non-convergence warns and sets the model's ``converged`` flag."""
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    x = train.features
    if np.isnan(x).any():
        raise ValueError("impute features before fitting the baseline")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    z = (x - mean) / std
    n, d = z.shape
    c = train.class_count

    if c == 2:
        y = train.labels.astype(np.float64)
        theta0 = np.zeros(d + 1)
        fun = lambda t: _binary_objective(t, z, y, l2)
    else:
        y = np.zeros((n, c))
        y[np.arange(n), train.labels] = 1.0
        theta0 = np.zeros(d * c + c)
        fun = lambda t: _multi_objective(t, z, y, l2)

    # ftol=0 so the only stopping criteria are the gradient norm and maxiter
    res = minimize(fun, theta0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0})
    converged = bool(np.max(np.abs(res.jac)) <= tol)
    if not converged:
        warnings.warn(f"logistic fit stopped before gradient tol: {res.message}")

    if c == 2:
        w, b = res.x[:d], float(res.x[d])
    else:
        w, b = res.x[: d * c].reshape(d, c), res.x[d * c:]
    return LogRegModel(w, b, mean, std, l2, c, converged)
