# =============================================================================
# MPEMBED - SPARSE OPTIMIZER TESTS
# =============================================================================

from collections import defaultdict

import pytest
import numpy as np

from mpembed.mp_table import EmbeddingConfig, MixedPrecisionEmbedding
from mpembed.sparse_optim import (
    GradientBatch,
    RowWiseAdagradState,
    apply_rowwise_adagrad,
    apply_sgd,
    dedup,
)


class TestGradientBatch:

    def test_from_entries(self):
        batch = GradientBatch.from_entries([(3, [1.0, 2.0]), (1, [0.5, 0.5])], 0.1)
        assert batch.indices.tolist() == [3, 1]
        assert batch.dim == 2
        assert len(batch) == 2

    def test_empty(self):
        batch = GradientBatch.from_entries([], 0.1, dim=4)
        assert len(batch) == 0
        assert batch.dim == 4

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            GradientBatch.from_entries([(0, [np.inf, 0.0])], 0.1)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            GradientBatch(np.array([0, 1]), np.zeros((3, 2)), 0.1)

    def test_rejects_non_positive_rate(self):
        with pytest.raises(ValueError):
            GradientBatch.from_entries([(0, [1.0])], 0.0)


class TestDedup:

    def test_shared_row_is_summed(self):
        """One example touches rows 1 and 2, another rows 2 and 3."""
        g1 = np.array([1.0, 2.0], dtype=np.float32)
        g2 = np.array([0.25, -1.0], dtype=np.float32)
        batch = GradientBatch.from_entries([(1, g1), (2, g1), (2, g2), (3, g2)], 0.1)
        merged = dedup(batch)
        assert merged.indices.tolist() == [1, 2, 3]
        assert merged.grads.tolist() == [g1.tolist(), (g1 + g2).tolist(), g2.tolist()]

    def test_single_entry_unchanged(self):
        batch = GradientBatch.from_entries([(7, [0.5, 1.5])], 0.1)
        merged = dedup(batch)
        assert merged.indices.tolist() == [7]
        assert merged.grads.tolist() == [[0.5, 1.5]]

    def test_matches_map_accumulation(self, rng):
        for _ in range(1000):
            m = int(rng.integers(1, 101))
            indices = rng.integers(0, 10, size=m)
            grads = rng.standard_normal((m, 3)).astype(np.float32)
            expected = defaultdict(lambda: np.zeros(3, dtype=np.float32))
            for i, g in zip(indices.tolist(), grads):
                expected[i] = expected[i] + g
            merged = dedup(GradientBatch(indices, grads, 0.1))
            assert merged.indices.tolist() == sorted(expected)
            np.testing.assert_allclose(
                merged.grads, np.stack([expected[i] for i in sorted(expected)]), rtol=1e-5, atol=1e-5
            )

    def test_permutation_invariant(self, rng):
        """Shuffling the entries never changes a bit of the merged batch."""
        for _ in range(200):
            m = int(rng.integers(1, 60))
            indices = rng.integers(0, 8, size=m)
            grads = (rng.standard_normal((m, 3)) * 10.0 ** rng.integers(-4, 4, size=(m, 1))).astype(np.float32)
            reference = dedup(GradientBatch(indices, grads, 0.1))
            for _ in range(5):
                perm = rng.permutation(m)
                shuffled = dedup(GradientBatch(indices[perm], grads[perm], 0.1))
                assert np.array_equal(shuffled.indices, reference.indices)
                assert np.array_equal(shuffled.grads.view(np.uint32), reference.grads.view(np.uint32))


class TestSgd:

    def test_fp32_step(self, fp32_config):
        emb = MixedPrecisionEmbedding.from_dense(np.ones((2, 2), dtype=np.float32), fp32_config)
        apply_sgd(emb, GradientBatch.from_entries([(0, [0.5, 0.5])], 1.0))
        assert emb.fetch(0).tolist() == [0.5, 0.5]
        assert emb.fetch(1).tolist() == [1.0, 1.0]

    def test_zero_gradient_keeps_representable_row(self):
        cfg = EmbeddingConfig(dim=4, precision="int2")
        emb = MixedPrecisionEmbedding.from_dense(np.array([[0, 5, 10, 15]], dtype=np.float32), cfg)
        before = emb.table.payload.copy()
        apply_sgd(emb, GradientBatch.from_entries([(0, np.zeros(4))], 0.1))
        assert np.array_equal(emb.table.payload, before)
        assert emb.fetch(0).tolist() == [0.0, 5.0, 10.0, 15.0]

    @pytest.mark.parametrize("precision", ["int8", "int4", "int2"])
    @pytest.mark.parametrize("rounding", ["nearest", "stochastic"])
    def test_zero_gradient_keeps_any_stored_row(self, rng, precision, rounding):
        cfg = EmbeddingConfig(dim=16, precision=precision, rounding=rounding)
        emb = MixedPrecisionEmbedding.from_dense(rng.standard_normal((20, 16)).astype(np.float32), cfg)
        payload = emb.table.payload.copy()
        params = emb.table.params.copy()
        apply_sgd(emb, GradientBatch(np.arange(20), np.zeros((20, 16)), 0.1))
        assert np.array_equal(emb.table.payload, payload)
        assert np.array_equal(emb.table.params.view(np.uint32), params.view(np.uint32))

    def test_requires_dedup(self, fp32_config):
        emb = MixedPrecisionEmbedding.build(4, fp32_config)
        batch = GradientBatch.from_entries([(1, [1.0, 1.0]), (1, [1.0, 1.0])], 0.1)
        with pytest.raises(ValueError, match="de-duplicated"):
            apply_sgd(emb, batch)

    def test_dim_mismatch(self, fp32_config):
        emb = MixedPrecisionEmbedding.build(4, fp32_config)
        with pytest.raises(ValueError):
            apply_sgd(emb, GradientBatch.from_entries([(1, [1.0, 1.0, 1.0])], 0.1))

    def test_merged_step_matches_sequential_steps(self, rng):
        """One step on summed gradients lands within 1 ulp of per-occurrence steps."""
        cfg = EmbeddingConfig(dim=8, precision="fp32")
        start = rng.uniform(1.25, 1.75, size=(50, 8)).astype(np.float32)
        indices = rng.permutation(np.repeat(np.arange(50), 2))
        grads = (rng.standard_normal((100, 8)) * 1e-3).astype(np.float32)

        merged = MixedPrecisionEmbedding.from_dense(start, cfg)
        apply_sgd(merged, dedup(GradientBatch(indices, grads, 1.0)))

        sequential = MixedPrecisionEmbedding.from_dense(start, cfg)
        for i, g in zip(indices.tolist(), grads):
            apply_sgd(sequential, GradientBatch.from_entries([(i, g)], 1.0))

        np.testing.assert_array_max_ulp(merged.to_dense(), sequential.to_dense(), maxulp=1)


class TestRowWiseAdagrad:

    def test_first_step(self, fp32_config):
        emb = MixedPrecisionEmbedding.from_dense(np.ones((1, 2), dtype=np.float32), fp32_config)
        state = RowWiseAdagradState.zeros(1, epsilon=0.0)
        apply_rowwise_adagrad(emb, GradientBatch.from_entries([(0, [3.0, 4.0])], 1.0), state)
        assert state.momentum[0] == pytest.approx(12.5)
        step = np.ones(2) - emb.fetch(0)
        assert step == pytest.approx([0.84853, 1.13137], abs=1e-5)

    def test_momentum_accumulates(self, fp32_config):
        emb = MixedPrecisionEmbedding.build(1, fp32_config)
        state = RowWiseAdagradState.zeros(1)
        for _ in range(3):
            apply_rowwise_adagrad(emb, GradientBatch.from_entries([(0, [1.0, 1.0])], 0.1), state)
        assert state.momentum[0] == pytest.approx(3.0)

    def test_zero_gradient(self, fp32_config):
        weights = np.array([[0.25, -0.5]], dtype=np.float32)
        emb = MixedPrecisionEmbedding.from_dense(weights, fp32_config)
        state = RowWiseAdagradState.zeros(1)
        apply_rowwise_adagrad(emb, GradientBatch.from_entries([(0, [0.0, 0.0])], 1.0), state)
        assert state.momentum[0] == 0.0
        assert emb.fetch(0).tolist() == [0.25, -0.5]

    def test_state_size_mismatch(self, fp32_config):
        emb = MixedPrecisionEmbedding.build(3, fp32_config)
        with pytest.raises(ValueError):
            apply_rowwise_adagrad(
                emb, GradientBatch.from_entries([(0, [1.0, 1.0])], 0.1), RowWiseAdagradState.zeros(2)
            )


# =============================================================================
# RUN TESTS
# =============================================================================

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
