# =============================================================================
# MPEMBED - REFERENCE CACHE SIMULATOR
# =============================================================================
# Obviously-correct, list-based version of the cache update rule. It keeps
# only tags and priority values (no row payloads) and is used as an oracle
# for HighPrecisionCache and for associativity experiments.
# =============================================================================

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cache_core import (
    EMPTY,
    LFU_COUNTER_MAX,
    CacheConfig,
    HighPrecisionCache,
    ReplacementPolicy,
    hash_index,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepRecord:
    """State after one update step."""
    index: int
    hit: bool
    outcome: str  # "hit" | "cached" | "evicted" | "bypassed"
    tags: Tuple[Tuple[int, ...], ...]
    priorities: Tuple[Tuple[int, ...], ...]


class ReferenceCache:
    """One list of [tag, timestamp] pairs per set; linear scans everywhere."""

    def __init__(self, config: CacheConfig):
        self.config = config
        self.sets: List[List[List[int]]] = [
            [[EMPTY, 0] for _ in range(config.associativity)]
            for _ in range(config.num_sets)
        ]
        self.counts: Dict[int, int] = {}

    def _pv(self, way: List[int]) -> int:
        if way[0] == EMPTY:
            return 0
        if self.config.policy is ReplacementPolicy.LFU:
            return self.counts.get(way[0], 0)
        return way[1]

    def step(self, i: int, now: int) -> StepRecord:
        lfu = self.config.policy is ReplacementPolicy.LFU
        if lfu:
            self.counts[i] = min(self.counts.get(i, 0) + 1, LFU_COUNTER_MAX)
            pv_i = self.counts[i]
        else:
            pv_i = now

        ways = self.sets[hash_index(i, self.config)]
        resident = [way for way in ways if way[0] == i]
        if resident:
            if not lfu:
                resident[0][1] = now
            return self._record(i, True, "hit")

        for way in ways:
            if way[0] == EMPTY:
                way[0], way[1] = i, (0 if lfu else pv_i)
                return self._record(i, False, "cached")

        lowest = ways[0]
        for way in ways[1:]:
            if self._pv(way) < self._pv(lowest):
                lowest = way
        always_evict = self.config.associativity == 1 and not lfu
        if not always_evict and pv_i <= self._pv(lowest):
            return self._record(i, False, "bypassed")
        lowest[0], lowest[1] = i, (0 if lfu else pv_i)
        return self._record(i, False, "evicted")

    def _record(self, i: int, hit: bool, outcome: str) -> StepRecord:
        tags = tuple(tuple(way[0] for way in ways) for ways in self.sets)
        priorities = tuple(tuple(self._pv(way) for way in ways) for ways in self.sets)
        return StepRecord(i, hit, outcome, tags, priorities)

    def hits(self, trace: Sequence[int]) -> int:
        return sum(self.step(i, t + 1).hit for t, i in enumerate(trace))


def _optimized_step(cache: HighPrecisionCache, i: int, now: int) -> StepRecord:
    pv_i = cache.touch(i, now)
    if cache.lookup(i) is not None:
        outcome, hit = "hit", True
    else:
        result = cache.admit_or_bypass(i, np.zeros(cache.config.row_dim, dtype=np.float32), pv_i)
        outcome, hit = result.kind.value, False
    tags = tuple(tuple(int(t) for t in row) for row in cache.tags)
    priorities = tuple(
        tuple(int(p) for p in cache.set_priorities(s)) for s in range(cache.config.num_sets)
    )
    return StepRecord(i, hit, outcome, tags, priorities)


def compare_histories(
    trace: Sequence[int],
    config: CacheConfig,
    num_rows: int,
) -> Optional[Tuple[int, StepRecord, StepRecord]]:
    """
    Drive HighPrecisionCache and ReferenceCache with the same trace.

    Returns:
        None when every step matches, else (step, optimized, reference)
        for the first divergence
    """
    optimized = HighPrecisionCache(config, num_rows)
    reference = ReferenceCache(config)
    for step, i in enumerate(trace):
        now = step + 1
        got = _optimized_step(optimized, int(i), now)
        want = reference.step(int(i), now)
        if got != want:
            return step, got, want
    return None


def lfu_associativity_counterexamples(
    trace: Sequence[int],
    capacity_rows: int,
    associativities: Sequence[int] = (1, 2, 4, 8, 16, 32),
) -> List[Tuple[int, int, int, int]]:
    """
    Check that LFU hit count never drops as associativity grows at fixed capacity.

    Returns:
        (alpha_small, hits_small, alpha_large, hits_large) for every adjacent
        pair where the larger associativity scored fewer hits
    """
    results = []
    for alpha in associativities:
        if capacity_rows % alpha:
            continue
        config = CacheConfig(capacity_rows // alpha, alpha, 1, ReplacementPolicy.LFU)
        results.append((alpha, ReferenceCache(config).hits(trace)))

    counterexamples = []
    for (small, small_hits), (large, large_hits) in zip(results, results[1:]):
        if large_hits < small_hits:
            logger.warning(
                "LFU hit count fell from %d (alpha=%d) to %d (alpha=%d) at capacity %d",
                small_hits, small, large_hits, large, capacity_rows,
            )
            counterexamples.append((small, small_hits, large, large_hits))
    return counterexamples


# =============================================================================
# END OF REFERENCE CACHE SIMULATOR
# =============================================================================
