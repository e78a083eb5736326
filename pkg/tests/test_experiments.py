# =============================================================================
# MPEMBED - EXPERIMENT RUNNER TESTS
# =============================================================================

import copy
import json

import pytest
import pandas as pd

from mpembed.cache_core import ReplacementPolicy
from mpembed.experiments import (
    BenchPoint,
    SimCell,
    build_trace,
    check_bench_monotonic,
    check_bench_trend,
    run_bench,
    run_simulate,
    run_train_toy,
    simulate_cells,
    toy_configs,
)
from mpembed.trace_sim import gen_zipf_trace, write_trace


@pytest.fixture
def small_bench_cfg():
    return {
        "seed": 0,
        "output_dir": "unused",
        "hit_rates": [0.0, 1.0],
        "num_rows": 2000,
        "hot_rows": 20,
        "dim": 4,
        "precision": "int8",
        "accesses": 300,
        "repeats": 1,
        "learning_rate": 0.01,
    }


class TestSimulateGrid:
    """Grid expansion and trace construction."""

    def test_cells(self, small_sim_cfg):
        cells = simulate_cells(small_sim_cfg["grid"])
        assert len(cells) == 4
        assert cells[0] == SimCell(ReplacementPolicy.LRU, 0.05, 1)
        assert cells[0].name == "sim_lru_a1_r0.05"

    def test_phased_trace_splits_iterations(self, small_sim_cfg):
        trace_cfg = dict(small_sim_cfg["trace"], kind="phased")
        trace = build_trace(trace_cfg, seed=0)
        assert len(trace) == 48
        assert trace.metadata["iterations_per_phase"] == 12

    def test_file_trace(self, tmp_path, small_sim_cfg):
        path = write_trace(gen_zipf_trace(100, 5, 4, seed=1), tmp_path / "t.trace")
        trace = build_trace(dict(small_sim_cfg["trace"], kind="file", path=str(path)), seed=0)
        assert trace.num_rows == 100
        assert len(trace) == 5


class TestRunSimulate:

    def test_file_contract(self, tmp_path, small_sim_cfg):
        """2 policies x 2 ratios -> 4 JSON reports + 1 CSV."""
        result = run_simulate(small_sim_cfg, tmp_path)
        assert result.errors == []
        assert len(list(tmp_path.glob("*.json"))) == 4
        assert len(list(tmp_path.glob("*.csv"))) == 1
        assert len(result.files) == 5

    def test_report_contents(self, tmp_path, small_sim_cfg):
        run_simulate(small_sim_cfg, tmp_path)
        record = json.loads((tmp_path / "sim_lfu_a1_r0.1.json").read_text())
        assert record["policy"] == "lfu"
        assert record["cache_ratio"] == 0.1
        assert record["hits"] + record["misses"] == record["updates"]
        assert record["distribution"] == "zipf"

    def test_hit_rate_csv(self, tmp_path, small_sim_cfg):
        run_simulate(small_sim_cfg, tmp_path)
        text = (tmp_path / "hit_rates.csv").read_text()
        assert text.splitlines()[0] == "policy,associativity,0.05000,0.10000"
        frame = pd.read_csv(tmp_path / "hit_rates.csv")
        assert frame["policy"].tolist() == ["lfu", "lru"]

    def test_rerun_is_byte_identical(self, tmp_path, small_sim_cfg):
        run_simulate(small_sim_cfg, tmp_path / "a")
        run_simulate(small_sim_cfg, tmp_path / "b")
        for name in ("hit_rates.csv", "sim_lru_a1_r0.05.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_parallel_matches_serial(self, tmp_path, small_sim_cfg):
        run_simulate(small_sim_cfg, tmp_path / "serial", workers=1)
        run_simulate(small_sim_cfg, tmp_path / "parallel", workers=2)
        serial = (tmp_path / "serial" / "hit_rates.csv").read_bytes()
        assert (tmp_path / "parallel" / "hit_rates.csv").read_bytes() == serial

    def test_empty_grid(self, tmp_path, small_sim_cfg):
        cfg = copy.deepcopy(small_sim_cfg)
        cfg["grid"]["cache_ratios"] = []
        with pytest.raises(ValueError, match="empty experiment grid"):
            run_simulate(cfg, tmp_path)


class TestRunTrainToy:

    def test_grid_order(self):
        grid = {
            "precisions": ["int4", "int2"],
            "roundings": ["nearest"],
            "caches": [{"ratio": 0.0}, {"ratio": 0.1, "associativity": 32}],
        }
        labels = [c.label for c in toy_configs(grid, 16)]
        assert labels == [
            "INT4/nearest", "INT4/nearest/lfu-32way-0.1",
            "INT2/nearest", "INT2/nearest/lfu-32way-0.1",
        ]

    def test_outputs(self, tiny_toy_cfg):
        result = run_train_toy(tiny_toy_cfg)
        out = result.files[0].parent
        metrics = json.loads((out / "metrics.json").read_text())
        assert len(metrics) == 5
        assert metrics[0]["config"] == "FP32/nearest"
        assert metrics[0]["accuracy_drop_pct"] == 0.0

        table = pd.read_csv(out / "accuracy_drop.csv", dtype=str)
        assert len(table) == 5
        assert table["config"].tolist()[0] == "FP32/nearest"
        assert table["accuracy_drop_pct"].tolist()[0] == "0.000"
        assert table["compression_factor"].tolist()[0] == "1.00000"
        assert list(table.columns)[-2:] == ["accuracy_drop_pct", "diverged_runs"]

    def test_dataset_cached_between_runs(self, tiny_toy_cfg, tmp_path):
        run_train_toy(tiny_toy_cfg)
        cached = list((tmp_path / "cache").glob("toy-*.npz"))
        assert len(cached) == 1


class TestRunBench:

    def test_observed_hit_rates(self, tmp_path, small_bench_cfg):
        result = run_bench(small_bench_cfg, tmp_path)
        observed = [p.observed_hit_rate for p in result.points]
        assert observed == [0.0, 1.0]
        assert all(p.update_rows_per_s > 0 for p in result.points)
        assert (tmp_path / "bench.csv").exists()

    def test_monotonic_check(self):
        points = [
            BenchPoint(0.0, 0.0, 100.0, 50.0),
            BenchPoint(0.5, 0.5, 100.0, 40.0),
            BenchPoint(1.0, 1.0, 100.0, 90.0),
        ]
        problems = check_bench_monotonic(points)
        assert len(problems) == 1
        assert "0.5" in problems[0]

    def test_trend_check(self):
        rising = [BenchPoint(0.05, 0.05, 100.0, 40.0), BenchPoint(0.95, 0.95, 100.0, 90.0)]
        assert check_bench_trend(rising) == []
        inverted = [BenchPoint(0.95, 0.95, 100.0, 40.0), BenchPoint(0.05, 0.05, 100.0, 90.0)]
        errors = check_bench_trend(inverted)
        assert len(errors) == 1
        assert "0.95" in errors[0]
        assert check_bench_trend(rising[:1]) == []

    def test_hits_update_faster_than_misses(self, tmp_path, small_bench_cfg):
        """Cache-hit updates skip quantization: 0.95 beats 0.05."""
        cfg = dict(
            small_bench_cfg,
            hit_rates=[0.05, 0.95],
            num_rows=20_000,
            hot_rows=200,
            dim=64,
            accesses=3000,
            repeats=3,
        )
        result = run_bench(cfg, tmp_path)
        low, high = result.points
        assert high.update_rows_per_s > low.update_rows_per_s
        assert result.errors == []


# =============================================================================
# RUN TESTS
# =============================================================================

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
