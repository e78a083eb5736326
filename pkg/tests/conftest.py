# =============================================================================
# MPEMBED - PYTEST CONFIGURATION
# =============================================================================
# Shared fixtures and configuration for all tests.
# Acceptance-scale checks are marked `slow`; run `pytest -m "not slow"` for
# the quick loop.
# =============================================================================

import pytest
import sys
import os
from pathlib import Path

import numpy as np

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from mpembed.cache_core import CacheConfig, ReplacementPolicy
from mpembed.mp_table import EmbeddingConfig
from mpembed.numerics import Precision, RoundingMode
from mpembed.rng import RngStream


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale check (minutes)")


@pytest.fixture
def project_root():
    """Get project root directory."""
    return Path(__file__).parent.parent


@pytest.fixture
def configs_dir(project_root):
    """Get shipped experiment config directory."""
    return project_root / "configs"


@pytest.fixture
def stream():
    """A fixed random stream for stochastic rounding."""
    return RngStream(seed=1234, table_id=0, row=0, iteration=0, position=0)


@pytest.fixture
def rng():
    """numpy Generator for test data."""
    return np.random.default_rng(20240601)


@pytest.fixture
def direct_mapped_lfu():
    """Two-set, one-way LFU cache over rows of width 2."""
    return CacheConfig(num_sets=2, associativity=1, row_dim=2, policy=ReplacementPolicy.LFU)


@pytest.fixture
def direct_mapped_lru():
    return CacheConfig(num_sets=2, associativity=1, row_dim=2, policy=ReplacementPolicy.LRU)


@pytest.fixture
def fp32_config():
    """FP32 table, no cache."""
    return EmbeddingConfig(dim=2, precision=Precision.FP32, rounding=RoundingMode.NEAREST)


@pytest.fixture
def small_sim_cfg():
    """Simulate config small enough to run in a second."""
    return {
        "seed": 0,
        "workers": 1,
        "output_dir": "unused",
        "trace": {
            "kind": "zipf",
            "num_rows": 2000,
            "iterations": 50,
            "batch_rows": 32,
            "exponent": 1.05,
            "phases": 4,
            "path": None,
        },
        "embedding": {
            "dim": 4,
            "precision": "fp32",
            "rounding": "nearest",
            "hash": "modulo",
            "learning_rate": 0.01,
        },
        "grid": {
            "policies": ["lru", "lfu"],
            "cache_ratios": [0.05, 0.1],
            "associativities": [1],
        },
    }


@pytest.fixture
def tiny_toy_cfg(tmp_path):
    """Train-toy config with a task small enough for unit tests."""
    return {
        "seeds": [0],
        "workers": 1,
        "output_dir": str(tmp_path / "out"),
        "cache_dir": str(tmp_path / "cache"),
        "task": {
            "num_tables": 2,
            "rows_per_table": [50, 80],
            "dim": 4,
            "examples": 400,
            "zipf_exponent": 1.05,
            "label_noise": 0.0,
            "test_fraction": 0.25,
            "seed": 0,
        },
        "optimizer": {
            "kind": "adagrad",
            "learning_rate": 0.05,
            "epsilon": 1e-8,
            "batch_size": 32,
            "epochs": 1,
            "init_scale": 0.1,
        },
        "grid": {
            "precisions": ["int4", "int2"],
            "roundings": ["nearest", "stochastic"],
            "caches": [{"ratio": 0.0}],
        },
    }
