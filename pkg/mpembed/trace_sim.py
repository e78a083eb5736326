# =============================================================================
# MPEMBED - TRACE SIMULATION
# =============================================================================
# Synthetic access traces and trace-driven replay through an embedding.
#
# GENERATORS:
# - zipf:    rank k drawn with P(k) ~ k^-s via CDF + binary search, mapped
#            to rows through one random permutation of [0, N)
# - phased:  as zipf, but the rank -> row permutation is re-drawn at each
#            phase boundary (data shift)
# - uniform: no skew, control case
# - hit-rate: hot resident rows vs cold rows, for throughput sweeps
#
# REPLAY (per iteration):
# 1. de-duplicate the iteration's indices (unit gradients summed)
# 2. fetch, SGD step, update for each unique row
# 3. accumulate hit / miss / bypass / eviction counters
#
# Hits and misses are counted on update-path lookups after de-duplication.
# =============================================================================

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import yaml

from .cache_core import ReplacementPolicy
from .mp_table import EmbeddingConfig, MixedPrecisionEmbedding, compression_factor
from .numerics import RoundingMode
from .sparse_optim import GradientBatch, apply_sgd, dedup

logger = logging.getLogger(__name__)

TRACE_FORMAT_TAG = "mpembed-trace v1"


@dataclass
class AccessTrace:
    """Iterations of multi-hot row accesses over a table of num_rows rows."""
    num_rows: int
    iterations: List[np.ndarray]
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.iterations = [np.asarray(rows, dtype=np.int64).reshape(-1) for rows in self.iterations]
        for t, rows in enumerate(self.iterations):
            if rows.size and (rows.min() < 0 or rows.max() >= self.num_rows):
                raise ValueError(
                    f"Trace iteration {t} has an index outside [0, {self.num_rows})"
                )

    def __len__(self) -> int:
        return len(self.iterations)

    @property
    def total_accesses(self) -> int:
        return sum(int(rows.size) for rows in self.iterations)

    def access_counts(self) -> np.ndarray:
        counts = np.zeros(self.num_rows, dtype=np.int64)
        for rows in self.iterations:
            np.add.at(counts, rows, 1)
        return counts


# =============================================================================
# GENERATORS
# =============================================================================

class ZipfSampler:
    """Zipf(s) over ranks 0..n-1 using a precomputed CDF."""

    def __init__(self, num_items: int, exponent: float):
        if num_items < 1:
            raise ValueError(f"num_items must be >= 1, got {num_items}")
        if not exponent > 0:
            raise ValueError(f"Zipf exponent must be > 0, got {exponent}")
        weights = np.arange(1, num_items + 1, dtype=np.float64) ** -exponent
        self.cdf = np.cumsum(weights)
        self.cdf /= self.cdf[-1]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        ranks = np.searchsorted(self.cdf, rng.random(size), side="right")
        return np.minimum(ranks, self.cdf.size - 1)


def _zipf_iterations(
    num_rows: int,
    phases: int,
    iterations_per_phase: int,
    batch_rows_per_iter: int,
    exponent: float,
    seed: int,
) -> List[np.ndarray]:
    rng = np.random.default_rng(seed)
    sampler = ZipfSampler(num_rows, exponent)
    iterations: List[np.ndarray] = []
    for _ in range(phases):
        permutation = rng.permutation(num_rows)
        ranks = sampler.sample(rng, iterations_per_phase * batch_rows_per_iter)
        rows = permutation[ranks].reshape(iterations_per_phase, batch_rows_per_iter)
        iterations.extend(rows)
    return iterations


def gen_zipf_trace(
    num_rows: int,
    iterations: int,
    batch_rows_per_iter: int,
    exponent: float = 1.05,
    seed: int = 0,
) -> AccessTrace:
    """Stationary Zipf trace; deterministic per seed."""
    rows = _zipf_iterations(num_rows, 1, iterations, batch_rows_per_iter, exponent, seed)
    return AccessTrace(
        num_rows,
        rows,
        {
            "distribution": "zipf",
            "exponent": exponent,
            "seed": seed,
            "batch_rows_per_iter": batch_rows_per_iter,
        },
    )


def gen_phased_trace(
    num_rows: int,
    phases: int,
    iterations_per_phase: int,
    exponent: float = 1.05,
    seed: int = 0,
    batch_rows_per_iter: int = 64,
) -> AccessTrace:
    """Zipf trace whose hot set moves at every phase boundary."""
    if phases < 1:
        raise ValueError(f"phases must be >= 1, got {phases}")
    rows = _zipf_iterations(
        num_rows, phases, iterations_per_phase, batch_rows_per_iter, exponent, seed
    )
    return AccessTrace(
        num_rows,
        rows,
        {
            "distribution": "phased",
            "exponent": exponent,
            "seed": seed,
            "phases": phases,
            "iterations_per_phase": iterations_per_phase,
            "batch_rows_per_iter": batch_rows_per_iter,
        },
    )


def gen_uniform_trace(
    num_rows: int,
    iterations: int,
    batch_rows_per_iter: int,
    seed: int = 0,
) -> AccessTrace:
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, num_rows, size=(iterations, batch_rows_per_iter))
    return AccessTrace(
        num_rows,
        list(rows),
        {"distribution": "uniform", "seed": seed, "batch_rows_per_iter": batch_rows_per_iter},
    )


def hit_rate_trace(
    num_rows: int,
    hot_rows: int,
    hit_rate: float,
    accesses: int,
    seed: int = 0,
) -> AccessTrace:
    """
    One access per iteration: a hot row (0..hot_rows-1) with probability
    `hit_rate`, else a cold row from [hot_rows, num_rows).

    With hot rows warmed into an LFU cache first, cold rows bypass and the
    observed hit rate tracks `hit_rate`.
    """
    if not 0 < hot_rows < num_rows:
        raise ValueError(f"hot_rows must be in (0, {num_rows}), got {hot_rows}")
    if not 0.0 <= hit_rate <= 1.0:
        raise ValueError(f"hit_rate must be in [0, 1], got {hit_rate}")
    rng = np.random.default_rng(seed)
    hot = rng.integers(0, hot_rows, size=accesses)
    cold = rng.integers(hot_rows, num_rows, size=accesses)
    rows = np.where(rng.random(accesses) < hit_rate, hot, cold)
    return AccessTrace(
        num_rows,
        list(rows.reshape(accesses, 1)),
        {"distribution": "hit_rate", "hit_rate": hit_rate, "hot_rows": hot_rows, "seed": seed},
    )


# =============================================================================
# TRACE FILES
# =============================================================================

def write_trace(trace: AccessTrace, path: Union[str, Path]) -> Path:
    """One iteration per line, '#' metadata header lines first."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"# {TRACE_FORMAT_TAG}\n")
        handle.write(f"# num_rows={trace.num_rows}\n")
        for key, value in trace.metadata.items():
            handle.write(f"# {key}={value}\n")
        for rows in trace.iterations:
            handle.write(" ".join(str(int(i)) for i in rows))
            handle.write("\n")
    return path


def read_trace(path: Union[str, Path], num_rows: Optional[int] = None) -> AccessTrace:
    """Parse a trace file; num_rows falls back to the header, then max index + 1."""
    metadata: Dict[str, object] = {}
    iterations: List[np.ndarray] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            text = line.strip()
            if text.startswith("#"):
                body = text[1:].strip()
                if "=" in body:
                    key, value = body.split("=", 1)
                    metadata[key.strip()] = yaml.safe_load(value.strip())
                continue
            try:
                iterations.append(np.array([int(tok) for tok in text.split()], dtype=np.int64))
            except ValueError:
                raise ValueError(f"{path}:{line_no}: expected space-separated row indices")

    header_rows = metadata.pop("num_rows", None)
    if num_rows is None:
        num_rows = header_rows
    if num_rows is None:
        num_rows = 1 + max((int(rows.max()) for rows in iterations if rows.size), default=0)
    return AccessTrace(int(num_rows), iterations, metadata)


# =============================================================================
# REPLAY
# =============================================================================

@dataclass
class SimReport:
    """Statistics of one replay."""
    hit_rate: float = 0.0
    hits: int = 0
    misses: int = 0
    updates: int = 0
    bypasses: int = 0
    evictions: int = 0
    cold_fills: int = 0
    compression_factor: float = 1.0
    cdf: List[List[float]] = field(default_factory=list)
    phase_hit_rates: List[float] = field(default_factory=list)
    access_counts: Optional[np.ndarray] = None
    config: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        """Flat JSON-ready record (per-row counts excluded)."""
        record: Dict[str, object] = dict(self.config)
        record.update(
            hit_rate=self.hit_rate,
            hits=self.hits,
            misses=self.misses,
            updates=self.updates,
            bypasses=self.bypasses,
            evictions=self.evictions,
            cold_fills=self.cold_fills,
            compression_factor=self.compression_factor,
            phase_hit_rates=list(self.phase_hit_rates),
            cdf=[list(point) for point in self.cdf],
        )
        return record


def access_cdf(counts: np.ndarray, points: int = 100) -> List[List[float]]:
    """
    CDF of sorted row access counts.

    Returns:
        [fraction_rows, fraction_accesses] pairs at `points` evenly spaced
        row fractions, rows ordered from most to least accessed
    """
    counts = np.sort(np.asarray(counts, dtype=np.int64))[::-1]
    if counts.size == 0:
        return []
    cumulative = np.cumsum(counts, dtype=np.float64)
    total = cumulative[-1]
    samples = []
    for k in range(1, points + 1):
        fraction_rows = k / points
        idx = max(0, int(np.ceil(fraction_rows * counts.size)) - 1)
        fraction_accesses = float(cumulative[idx] / total) if total else 0.0
        samples.append([fraction_rows, fraction_accesses])
    return samples


def replay(
    trace: AccessTrace,
    emb_config: EmbeddingConfig,
    policy: Optional[ReplacementPolicy] = None,
    cache_ratio: Optional[float] = None,
    rounding: Optional[RoundingMode] = None,
    seed: int = 0,
    learning_rate: float = 0.01,
    cdf_points: int = 100,
) -> SimReport:
    """
    Drive a fresh embedding with unit gradients over `trace`.

    policy / cache_ratio / rounding override the matching emb_config fields.
    """
    overrides = {}
    if policy is not None:
        overrides["policy"] = policy
    if cache_ratio is not None:
        overrides["cache_ratio"] = cache_ratio
    if rounding is not None:
        overrides["rounding"] = rounding
    config = replace(emb_config, **overrides)

    emb = MixedPrecisionEmbedding.build(trace.num_rows, config, seed=seed)
    unit = np.ones(config.dim, dtype=np.float32)
    phase_len = int(trace.metadata.get("iterations_per_phase") or 0)
    phase_hit_rates: List[float] = []
    phase_start = (0, 0)

    for t, rows in enumerate(trace.iterations):
        if rows.size:
            grads = np.broadcast_to(unit, (rows.size, config.dim))
            apply_sgd(emb, dedup(GradientBatch(rows, grads, learning_rate)))
        emb.advance_iteration()
        if phase_len and (t + 1) % phase_len == 0:
            hits = emb.stats.hits - phase_start[0]
            updates = emb.stats.updates - phase_start[1]
            phase_hit_rates.append(hits / updates if updates else 0.0)
            phase_start = (emb.stats.hits, emb.stats.updates)

    stats = emb.stats
    cache_cfg = emb.cache.config if emb.cache is not None else None
    report = SimReport(
        hit_rate=stats.hit_rate,
        hits=stats.hits,
        misses=stats.misses,
        updates=stats.updates,
        bypasses=stats.bypasses,
        evictions=stats.evictions,
        cold_fills=stats.cold_fills,
        compression_factor=compression_factor(
            config.precision, config.dim, config.cache_ratio, config.policy
        ),
        cdf=access_cdf(stats.updates_per_row, cdf_points),
        phase_hit_rates=phase_hit_rates,
        access_counts=stats.updates_per_row.copy(),
        config={
            "policy": config.policy.value,
            "associativity": config.associativity,
            "num_sets": cache_cfg.num_sets if cache_cfg else 0,
            "cache_ratio": config.cache_ratio,
            "precision": config.precision.name.lower(),
            "rounding": config.rounding.value,
            "hash": config.hash.value,
            "dim": config.dim,
            "num_rows": trace.num_rows,
            "iterations": len(trace),
            "distribution": trace.metadata.get("distribution", "file"),
        },
    )
    logger.info(
        "Replayed %s: hit rate %.4f over %d updates",
        config.label, report.hit_rate, report.updates,
    )
    return report


# =============================================================================
# END OF TRACE SIMULATION MODULE
# =============================================================================
