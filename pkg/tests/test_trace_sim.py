# =============================================================================
# MPEMBED - TRACE SIMULATION TESTS
# =============================================================================

import pytest
import numpy as np

from mpembed.cache_core import ReplacementPolicy
from mpembed.mp_table import EmbeddingConfig
from mpembed.trace_sim import (
    AccessTrace,
    ZipfSampler,
    access_cdf,
    gen_phased_trace,
    gen_uniform_trace,
    gen_zipf_trace,
    hit_rate_trace,
    read_trace,
    replay,
    write_trace,
)


@pytest.fixture
def fp32_sim_config():
    """FP32 storage keeps replay cost down; hit rates do not depend on precision."""
    return EmbeddingConfig(dim=4, precision="fp32", associativity=1)


@pytest.fixture(scope="module")
def zipf_trace():
    return gen_zipf_trace(5000, 300, 64, exponent=1.05, seed=0)


def _top_rows(trace: AccessTrace, start: int, stop: int, k: int) -> set:
    counts = np.zeros(trace.num_rows, dtype=np.int64)
    for rows in trace.iterations[start:stop]:
        np.add.at(counts, rows, 1)
    return set(np.argsort(-counts, kind="stable")[:k].tolist())


class TestAccessTrace:

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            AccessTrace(4, [np.array([0, 4])])

    def test_counts(self):
        trace = AccessTrace(4, [[0, 1, 1], [], [3]])
        assert len(trace) == 3
        assert trace.total_accesses == 4
        assert trace.access_counts().tolist() == [1, 2, 0, 1]


class TestGenerators:

    def test_zipf_deterministic(self):
        a = gen_zipf_trace(1000, 20, 16, seed=4)
        b = gen_zipf_trace(1000, 20, 16, seed=4)
        assert all(np.array_equal(x, y) for x, y in zip(a.iterations, b.iterations))

    def test_zipf_seed_matters(self):
        a = gen_zipf_trace(1000, 20, 16, seed=4)
        b = gen_zipf_trace(1000, 20, 16, seed=5)
        assert not all(np.array_equal(x, y) for x, y in zip(a.iterations, b.iterations))

    def test_single_row_table(self):
        trace = gen_zipf_trace(1, 10, 8)
        assert trace.total_accesses == 80
        assert all(rows.tolist() == [0] * 8 for rows in trace.iterations)

    def test_zipf_skew(self):
        """Top 20% of rows take at least 80% of one million draws."""
        trace = gen_zipf_trace(100_000, 1000, 1000, exponent=1.05, seed=0)
        counts = np.sort(trace.access_counts())[::-1]
        assert counts[:20_000].sum() >= 0.8 * counts.sum()

    def test_sampler_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            ZipfSampler(0, 1.05)
        with pytest.raises(ValueError):
            ZipfSampler(10, 0.0)

    def test_sampler_range(self, rng):
        ranks = ZipfSampler(7, 1.2).sample(rng, 5000)
        assert ranks.min() >= 0 and ranks.max() <= 6
        assert np.bincount(ranks)[0] == np.bincount(ranks).max()

    def test_single_phase_matches_zipf(self):
        phased = gen_phased_trace(2000, 1, 30, seed=9, batch_rows_per_iter=16)
        plain = gen_zipf_trace(2000, 30, 16, seed=9)
        assert all(np.array_equal(x, y) for x, y in zip(phased.iterations, plain.iterations))

    def test_phased_deterministic(self):
        a = gen_phased_trace(2000, 3, 10, seed=1)
        b = gen_phased_trace(2000, 3, 10, seed=1)
        assert all(np.array_equal(x, y) for x, y in zip(a.iterations, b.iterations))
        assert len(a) == 30
        assert a.metadata["iterations_per_phase"] == 10

    def test_phase_hot_sets_are_disjoint(self):
        trace = gen_phased_trace(100_000, 4, 100, seed=2, batch_rows_per_iter=64)
        hot = [_top_rows(trace, p * 100, (p + 1) * 100, 100) for p in range(4)]
        for a in range(4):
            for b in range(a + 1, 4):
                assert len(hot[a] & hot[b]) < 5

    def test_phased_rejects_zero_phases(self):
        with pytest.raises(ValueError):
            gen_phased_trace(100, 0, 10)

    def test_uniform(self):
        trace = gen_uniform_trace(50, 40, 10, seed=0)
        assert trace.total_accesses == 400
        assert trace.metadata["distribution"] == "uniform"

    def test_hit_rate_trace_extremes(self):
        hot = hit_rate_trace(1000, 10, 1.0, 500, seed=0)
        assert trace_max(hot) < 10
        cold = hit_rate_trace(1000, 10, 0.0, 500, seed=0)
        assert min(int(rows[0]) for rows in cold.iterations) >= 10

    def test_hit_rate_trace_rejects_bad_input(self):
        with pytest.raises(ValueError):
            hit_rate_trace(10, 10, 0.5, 5)
        with pytest.raises(ValueError):
            hit_rate_trace(10, 2, 1.5, 5)


def trace_max(trace: AccessTrace) -> int:
    return max(int(rows.max()) for rows in trace.iterations if rows.size)


class TestTraceFiles:

    def test_round_trip(self, tmp_path):
        trace = gen_phased_trace(500, 2, 5, seed=3, batch_rows_per_iter=7)
        trace.iterations.append(np.zeros(0, dtype=np.int64))
        loaded = read_trace(write_trace(trace, tmp_path / "t.trace"))
        assert loaded.num_rows == 500
        assert loaded.metadata == trace.metadata
        assert len(loaded) == len(trace)
        assert all(np.array_equal(x, y) for x, y in zip(loaded.iterations, trace.iterations))

    def test_num_rows_fallback(self, tmp_path):
        path = tmp_path / "bare.trace"
        path.write_text("3 1\n9\n")
        assert read_trace(path).num_rows == 10
        assert read_trace(path, num_rows=20).num_rows == 20

    def test_bad_token_reports_line(self, tmp_path):
        path = tmp_path / "bad.trace"
        path.write_text("# num_rows=10\n1 2\n3 x\n")
        with pytest.raises(ValueError, match=":3:"):
            read_trace(path)

    def test_out_of_range_index(self, tmp_path):
        path = tmp_path / "range.trace"
        path.write_text("# num_rows=4\n1 7\n")
        with pytest.raises(ValueError):
            read_trace(path)


class TestAccessCdf:

    def test_small_example(self):
        assert access_cdf(np.array([0, 3, 1, 0]), points=4) == [
            [0.25, 0.75], [0.5, 1.0], [0.75, 1.0], [1.0, 1.0],
        ]

    def test_empty(self):
        assert access_cdf(np.zeros(0)) == []

    def test_shape(self, zipf_trace):
        cdf = access_cdf(zipf_trace.access_counts())
        values = [share for _, share in cdf]
        assert len(cdf) == 100
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert values[-1] == 1.0


class TestReplay:

    def test_no_cache_never_hits(self, zipf_trace, fp32_sim_config):
        report = replay(zipf_trace, fp32_sim_config, cache_ratio=0.0)
        assert report.hit_rate == 0.0
        assert report.hits == 0
        assert report.misses == report.updates
        assert report.config["num_sets"] == 0

    def test_full_cache_only_cold_misses(self, fp32_sim_config):
        trace = gen_zipf_trace(300, 50, 16, seed=6)
        unique_updates = sum(np.unique(rows).size for rows in trace.iterations)
        touched = int(np.count_nonzero(trace.access_counts()))
        for policy in ReplacementPolicy:
            report = replay(trace, fp32_sim_config, policy=policy, cache_ratio=1.0)
            assert report.updates == unique_updates
            assert report.misses == touched
            assert report.hit_rate == pytest.approx(1 - touched / unique_updates)
            assert report.bypasses == report.evictions == 0

    def test_deterministic(self, fp32_sim_config):
        trace = gen_zipf_trace(500, 30, 16, seed=1)
        cfg = EmbeddingConfig(dim=4, precision="int4", rounding="stochastic", cache_ratio=0.05)
        assert replay(trace, cfg, seed=3).to_dict() == replay(trace, cfg, seed=3).to_dict()

    def test_accounting(self, zipf_trace, fp32_sim_config):
        report = replay(zipf_trace, fp32_sim_config, cache_ratio=0.05)
        assert report.hits + report.misses == report.updates
        assert report.misses == report.bypasses + report.evictions + report.cold_fills
        assert report.access_counts.sum() == report.updates

    def test_lfu_improves_with_capacity(self, zipf_trace, fp32_sim_config):
        rates = [
            replay(zipf_trace, fp32_sim_config, policy="lfu", cache_ratio=r).hit_rate
            for r in (0.01, 0.05, 0.1)
        ]
        assert rates[0] <= rates[1] <= rates[2]

    def test_lfu_beats_lru_on_stationary_trace(self, zipf_trace, fp32_sim_config):
        lfu = replay(zipf_trace, fp32_sim_config, policy="lfu", cache_ratio=0.05)
        lru = replay(zipf_trace, fp32_sim_config, policy="lru", cache_ratio=0.05)
        assert lfu.hit_rate > lru.hit_rate

    def test_phase_hit_rates(self, fp32_sim_config):
        trace = gen_phased_trace(1000, 3, 20, seed=0, batch_rows_per_iter=16)
        report = replay(trace, fp32_sim_config, cache_ratio=0.05)
        assert len(report.phase_hit_rates) == 3
        assert report.config["distribution"] == "phased"

    def test_report_dict(self, zipf_trace, fp32_sim_config):
        record = replay(zipf_trace, fp32_sim_config, policy="lru", cache_ratio=0.1).to_dict()
        assert record["policy"] == "lru"
        assert record["precision"] == "fp32"
        assert record["num_sets"] == 500
        assert "access_counts" not in record
        assert record["compression_factor"] == pytest.approx(1.0 + 0.1 + 0.1 / 4)


@pytest.mark.slow
class TestAcceptanceScale:
    """Hit-rate orderings on 10^5-row traces."""

    @pytest.fixture(scope="class")
    def stationary(self):
        return gen_zipf_trace(100_000, 10_000, 100, exponent=1.05, seed=0)

    @pytest.fixture(scope="class")
    def shifting(self):
        return gen_phased_trace(100_000, 64, 125, 1.05, seed=0, batch_rows_per_iter=100)

    def test_policy_ordering_at_five_percent(self, stationary):
        """32-way LFU > direct-mapped LFU > direct-mapped LRU."""
        def rate(policy, ways):
            cfg = EmbeddingConfig(dim=4, precision="fp32", associativity=ways)
            return replay(stationary, cfg, policy=policy, cache_ratio=0.05).hit_rate

        assert rate("lfu", 32) > rate("lfu", 1) > rate("lru", 1)

    @pytest.mark.parametrize("policy,ways", [("lru", 1), ("lfu", 1), ("lfu", 32)])
    def test_hit_rate_rises_with_cache_ratio(self, stationary, policy, ways):
        cfg = EmbeddingConfig(dim=4, precision="fp32", associativity=ways)
        rates = [
            replay(stationary, cfg, policy=policy, cache_ratio=r).hit_rate
            for r in (0.05, 0.1, 0.3, 0.5)
        ]
        assert all(a < b for a, b in zip(rates, rates[1:])), rates

    @pytest.mark.parametrize("ways", [1, 32])
    @pytest.mark.parametrize("ratio", [0.005, 0.01])
    def test_lru_beats_lfu_under_data_shift(self, shifting, ways, ratio):
        cfg = EmbeddingConfig(dim=4, precision="fp32", associativity=ways)
        lru = replay(shifting, cfg, policy="lru", cache_ratio=ratio)
        lfu = replay(shifting, cfg, policy="lfu", cache_ratio=ratio)
        assert lru.hit_rate > lfu.hit_rate, (lru.hit_rate, lfu.hit_rate)


# =============================================================================
# RUN TESTS
# =============================================================================

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
