# =============================================================================
# MPEMBED - REPORT FORMATTING TESTS
# =============================================================================

import pytest
import pandas as pd

from mpembed.mp_table import EmbeddingConfig
from mpembed.reports import (
    NOT_AVAILABLE,
    accuracy_frame,
    format_decimals,
    format_table,
    hit_rate_matrix,
    metrics_records,
    write_csv,
    write_json,
)
from mpembed.toy_model import ConfigSummary, TrainingGridResult, TrainMetrics, baseline_config
from mpembed.trace_sim import SimReport


def _report(policy, alpha, ratio, hit_rate):
    return SimReport(
        hit_rate=hit_rate,
        config={"policy": policy, "associativity": alpha, "cache_ratio": ratio, "num_sets": 1},
    )


def _grid(diverged=False):
    base = ConfigSummary(
        baseline_config(4),
        [TrainMetrics(label="FP32/nearest", seed=0, test_accuracy=0.8, log_loss=0.45)],
        [0.0],
    )
    low = ConfigSummary(
        EmbeddingConfig(dim=4, precision="int2"),
        [TrainMetrics(label="INT2/nearest", seed=0, test_accuracy=0.796, log_loss=0.5, diverged=diverged)],
        [None if diverged else 0.5],
    )
    return TrainingGridResult([base, low])


class TestFormatting:

    def test_half_up(self):
        df = pd.DataFrame({"name": ["a"], "value": [0.265625], "count": [3]})
        out = format_decimals(df)
        assert out["value"].tolist() == ["0.26563"]
        assert out["count"].tolist() == [3]
        assert out["name"].tolist() == ["a"]

    def test_float_headers(self):
        df = pd.DataFrame({0.05: [0.5]})
        assert list(format_decimals(df).columns) == ["0.05000"]

    def test_csv_line_endings(self, tmp_path):
        path = write_csv(pd.DataFrame({"x": [1.0, 2.0]}), tmp_path / "deep" / "x.csv")
        assert path.read_bytes() == b"x\n1.00000\n2.00000\n"

    def test_json_sorted(self, tmp_path):
        path = write_json({"b": 1, "a": 2}, tmp_path / "r.json")
        assert path.read_text().splitlines()[1].strip() == '"a": 2,'

    def test_empty_table(self):
        assert format_table(pd.DataFrame()) == "(no rows)"


class TestHitRateMatrix:

    def test_pivot(self):
        reports = [
            _report("lru", 1, 0.1, 0.3),
            _report("lfu", 1, 0.05, 0.4),
            _report("lfu", 1, 0.1, 0.5),
            _report("lru", 1, 0.05, 0.2),
        ]
        matrix = hit_rate_matrix(reports)
        assert list(matrix.columns) == ["policy", "associativity", 0.05, 0.1]
        assert matrix["policy"].tolist() == ["lfu", "lru"]
        assert matrix[0.1].tolist() == [0.5, 0.3]

    def test_empty(self):
        assert list(hit_rate_matrix([]).columns) == ["policy", "associativity"]


class TestAccuracyFrame:

    def test_rows(self):
        frame = accuracy_frame(_grid())
        assert frame["config"].tolist() == ["FP32/nearest", "INT2/nearest"]
        assert frame["accuracy_drop_pct"].tolist() == ["0.000", "0.500"]
        assert frame["accuracy"].tolist() == ["0.80000", "0.79600"]
        assert frame["policy"].tolist() == ["-", "-"]
        assert frame["compression_factor"].tolist() == ["1.00000", "0.56250"]

    def test_diverged_is_not_available(self):
        frame = accuracy_frame(_grid(diverged=True))
        row = frame.iloc[1]
        assert row["accuracy_drop_pct"] == NOT_AVAILABLE
        assert row["accuracy"] == NOT_AVAILABLE
        assert row["diverged_runs"] == 1

    def test_metrics_records(self):
        records = metrics_records(_grid(diverged=True))
        assert len(records) == 2
        assert records[1]["test_accuracy"] is None
        assert records[1]["diverged"] is True
        assert records[0]["accuracy_drop_pct"] == 0.0


# =============================================================================
# RUN TESTS
# =============================================================================

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
