"""Single-threaded latency, throughput, and model-size measurement.

The timed section pins BLAS pools to one thread so throughput numbers mean
"one core".  P99 is the nearest-rank order statistic over the timed runs,
and model_bytes is the exact size of the model's canonical serialization,
the same bytes its save() writes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .ioutil import canonical_json_bytes

DEFAULT_WARMUP = 5
DEFAULT_RUNS = 50


@dataclass(frozen=True)
class LatencyReport:
    mean_ms: float
    p99_ms: float
    throughput_per_s: float
    runs: int
    batch_rows: int
    model_bytes: int

    def to_dict(self) -> dict:
        return {
            "mean_ms": self.mean_ms,
            "p99_ms": self.p99_ms,
            "throughput_per_s": self.throughput_per_s,
            "runs": self.runs,
            "batch_rows": self.batch_rows,
            "model_bytes": self.model_bytes,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "LatencyReport":
        return cls(**obj)


def nearest_rank_p99(times: np.ndarray) -> float:
    """ceil(0.99 n)-th order statistic; for n=50 that is the maximum."""
    times = np.sort(np.asarray(times, dtype=np.float64))
    k = math.ceil(0.99 * times.shape[0])
    return float(times[k - 1])


def measure(model, rows: np.ndarray, warmup: int = DEFAULT_WARMUP,
            runs: int = DEFAULT_RUNS) -> LatencyReport:
    """Time full-batch predict_proba calls on one thread.

    ``model`` needs predict_proba(rows) and to_json_dict(); warmup calls
    are discarded.
    """
    if runs < 1:
        raise ValueError("need at least one timed run")
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    times = np.empty(runs, dtype=np.float64)
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            model.predict_proba(rows)
        for i in range(runs):
            start = time.perf_counter()
            model.predict_proba(rows)
            times[i] = time.perf_counter() - start
    mean_ms = float(times.mean() * 1000.0)
    return LatencyReport(
        mean_ms=mean_ms,
        p99_ms=nearest_rank_p99(times) * 1000.0,
        throughput_per_s=rows.shape[0] / (mean_ms / 1000.0),
        runs=runs,
        batch_rows=int(rows.shape[0]),
        model_bytes=len(canonical_json_bytes(model.to_json_dict())),
    )


def format_table(entries: list[tuple[str, LatencyReport]]) -> str:
    """Fixed-width text table, one row per measured model."""
    header = f"{'Model':<16}{'Mean ms':>10}{'P99 ms':>10}{'Rows/s':>14}{'Bytes':>12}"
    lines = [header, "-" * len(header)]
    for name, rep in entries:
        lines.append(
            f"{name:<16}{rep.mean_ms:>10.3f}{rep.p99_ms:>10.3f}"
            f"{rep.throughput_per_s:>14.0f}{rep.model_bytes:>12d}"
        )
    return "\n".join(lines)
