"""Latency measurement plumbing (the numbers themselves are hardware-bound,
so these tests pin the arithmetic and the reporting, not absolute speed)."""

import numpy as np
import pytest

from distillforge.bench import (
    DEFAULT_RUNS,
    DEFAULT_WARMUP,
    LatencyReport,
    format_table,
    measure,
    nearest_rank_p99,
)
from distillforge.ioutil import canonical_json_bytes


class StubModel:
    """Fixed-cost fake with the two methods measure() relies on."""

    def __init__(self, payload_floats=100):
        self.payload = list(np.linspace(0.0, 1.0, payload_floats))
        self.calls = 0

    def predict_proba(self, rows):
        self.calls += 1
        out = np.full((rows.shape[0], 2), 0.5)
        return out

    def to_json_dict(self):
        return {"format": "stub", "payload": self.payload}


class TestNearestRankP99:
    def test_fifty_samples_take_the_max(self):
        rng = np.random.default_rng(0)
        times = rng.random(50)
        assert nearest_rank_p99(times) == times.max()

    def test_hand_case_two_hundred(self):
        # ceil(0.99 * 200) = 198 -> second largest of 0..199
        times = np.arange(200, dtype=np.float64)
        assert nearest_rank_p99(times) == 197.0

    def test_single_sample(self):
        assert nearest_rank_p99(np.array([3.5])) == 3.5

    def test_order_invariant(self):
        times = np.array([5.0, 1.0, 4.0, 2.0, 3.0])
        assert nearest_rank_p99(times) == nearest_rank_p99(np.sort(times))


class TestMeasure:
    def test_report_fields_consistent(self):
        model = StubModel()
        rows = np.zeros((500, 4))
        rep = measure(model, rows, warmup=2, runs=10)
        assert rep.runs == 10
        assert rep.batch_rows == 500
        assert model.calls == 12  # warmup + timed
        assert rep.mean_ms > 0
        assert rep.p99_ms >= 0
        # throughput is defined off the mean, not measured independently
        assert rep.throughput_per_s == pytest.approx(
            500 / (rep.mean_ms / 1000.0), rel=1e-9)

    def test_model_bytes_equals_serialized_size(self, tmp_path):
        model = StubModel(payload_floats=321)
        rep = measure(model, np.zeros((10, 2)), warmup=0, runs=1)
        blob = canonical_json_bytes(model.to_json_dict())
        assert rep.model_bytes == len(blob)
        path = tmp_path / "stub.json"
        path.write_bytes(blob)
        assert rep.model_bytes == path.stat().st_size

    def test_p99_within_observed_range(self):
        rep = measure(StubModel(), np.zeros((50, 2)), warmup=0, runs=30)
        assert rep.p99_ms >= rep.mean_ms * 0.5

    def test_zero_runs_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            measure(StubModel(), np.zeros((5, 2)), runs=0)

    def test_defaults(self):
        assert DEFAULT_WARMUP == 5
        assert DEFAULT_RUNS == 50


class TestLatencyReport:
    def test_dict_roundtrip(self):
        rep = LatencyReport(mean_ms=1.5, p99_ms=2.0, throughput_per_s=666.0,
                            runs=50, batch_rows=1000, model_bytes=4096)
        assert LatencyReport.from_dict(rep.to_dict()) == rep

    def test_format_table_lists_every_model(self):
        rep = LatencyReport(1.234, 5.678, 12345.6, 50, 1000, 2048)
        text = format_table([("gbdt", rep), ("mlp", rep)])
        lines = text.splitlines()
        assert len(lines) == 4
        assert "Model" in lines[0] and "Rows/s" in lines[0]
        assert lines[2].startswith("gbdt")
        assert lines[3].startswith("mlp")
        assert "2048" in lines[2]
        assert "1.234" in lines[2]
