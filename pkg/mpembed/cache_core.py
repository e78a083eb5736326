# =============================================================================
# MPEMBED - FULL-PRECISION CACHE CORE
# =============================================================================
# n sets x alpha ways of FP32 rows with tags and priority values.
#
# PLACEMENT:
# - row i may only live in set h(i)
# - Modulo:         h(i) = i mod n
# - Multiplicative: h(i) = ((i * 0x9E3779B97F4A7C15) mod 2^64 >> 32) mod n
#
# PRIORITY VALUES:
# - LFU: one saturating 32-bit access counter per table row
# - LRU: one last-access timestamp per cached way
#
# ADMISSION (non-resident row i, priority pv_i already updated):
# - an EMPTY way in h(i) is filled first
# - else j = argmin PV over the set (lowest way on ties)
# - pv_i <= PV[j] -> bypass, otherwise evict j and install i in its way
# - alpha = 1 with LRU skips the comparison and always evicts
# =============================================================================

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, Optional, Tuple, Union

import numpy as np

EMPTY = -1
VALID_ASSOCIATIVITIES = (1, 2, 4, 8, 16, 32)
LFU_COUNTER_MAX = (1 << 32) - 1
_FIBONACCI_MULTIPLIER = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


class ReplacementPolicy(Enum):
    LRU = "lru"
    LFU = "lfu"

    @classmethod
    def parse(cls, text: Union[str, "ReplacementPolicy"]) -> "ReplacementPolicy":
        if isinstance(text, ReplacementPolicy):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise ValueError(f"Unknown replacement policy '{text}' (expected lru or lfu)")


class HashKind(Enum):
    MODULO = "modulo"
    MULTIPLICATIVE = "multiplicative"

    @classmethod
    def parse(cls, text: Union[str, "HashKind"]) -> "HashKind":
        if isinstance(text, HashKind):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise ValueError(f"Unknown hash '{text}' (expected modulo or multiplicative)")


@dataclass(frozen=True)
class CacheConfig:
    """Geometry and policy of one cache."""
    num_sets: int
    associativity: int
    row_dim: int
    policy: ReplacementPolicy = ReplacementPolicy.LFU
    hash: HashKind = HashKind.MODULO

    def __post_init__(self):
        if self.num_sets < 1:
            raise ValueError(f"num_sets must be >= 1, got {self.num_sets}")
        if self.associativity not in VALID_ASSOCIATIVITIES:
            raise ValueError(
                f"associativity must be one of {VALID_ASSOCIATIVITIES}, got {self.associativity}"
            )
        if self.row_dim < 1:
            raise ValueError(f"row_dim must be >= 1, got {self.row_dim}")
        object.__setattr__(self, "policy", ReplacementPolicy.parse(self.policy))
        object.__setattr__(self, "hash", HashKind.parse(self.hash))

    @property
    def capacity_rows(self) -> int:
        return self.num_sets * self.associativity

    @property
    def payload_bytes(self) -> int:
        """FP32 payload size: 4 * alpha * n * d bytes."""
        return 4 * self.associativity * self.num_sets * self.row_dim


class AdmitKind(Enum):
    CACHED_NO_EVICTION = "cached"
    CACHED_EVICTING = "evicted"
    BYPASSED = "bypassed"


@dataclass(frozen=True)
class AdmitOutcome:
    kind: AdmitKind
    way: Optional[int] = None
    victim: Optional[int] = None
    victim_row: Optional[np.ndarray] = None
    row: Optional[np.ndarray] = None


def hash_index(i: int, cfg: CacheConfig) -> int:
    """Map row index i to its set in [0, num_sets)."""
    if cfg.hash is HashKind.MODULO:
        return i % cfg.num_sets
    mixed = ((i * _FIBONACCI_MULTIPLIER) & _MASK64) >> 32
    return mixed % cfg.num_sets


class HighPrecisionCache:
    """
    Set-associative FP32 row cache.

    Single-writer: callers serialize touch/admit/write on one instance.
    """

    def __init__(self, config: CacheConfig, num_rows: int):
        if num_rows < 1:
            raise ValueError(f"num_rows must be >= 1, got {num_rows}")
        self.config = config
        self.num_rows = num_rows
        n, ways, dim = config.num_sets, config.associativity, config.row_dim
        self.tags = np.full((n, ways), EMPTY, dtype=np.int64)
        self.rows = np.zeros((n, ways, dim), dtype=np.float32)
        self.timestamps = np.zeros((n, ways), dtype=np.int64)
        self.counters = (
            np.zeros(num_rows, dtype=np.uint32)
            if config.policy is ReplacementPolicy.LFU
            else None
        )
        self._slots: Dict[int, Tuple[int, int]] = {}

    def __len__(self) -> int:
        return len(self._slots)

    def __contains__(self, i: int) -> bool:
        return i in self._slots

    # -------------------------------------------------------------------------
    # Lookups
    # -------------------------------------------------------------------------

    def lookup(self, i: int) -> Optional[int]:
        """Way index holding row i, or None on a miss. Read-only."""
        slot = self._slots.get(i)
        return None if slot is None else slot[1]

    def read(self, i: int) -> np.ndarray:
        set_index, way = self._slots[i]
        return self.rows[set_index, way].copy()

    def priority(self, i: int) -> int:
        """Current priority value of row i (0 if never touched / not resident under LRU)."""
        if self.counters is not None:
            return int(self.counters[i])
        slot = self._slots.get(i)
        return 0 if slot is None else int(self.timestamps[slot])

    def set_priorities(self, set_index: int) -> np.ndarray:
        """PV of each way in a set; EMPTY ways report 0."""
        tags = self.tags[set_index]
        if self.counters is not None:
            values = np.zeros(tags.size, dtype=np.int64)
            occupied = tags != EMPTY
            values[occupied] = self.counters[tags[occupied]]
            return values
        return self.timestamps[set_index].copy()

    def residents(self) -> Iterator[Tuple[int, np.ndarray]]:
        """Yield (row index, FP32 row) for every resident, ascending row index."""
        for i in sorted(self._slots):
            yield i, self.read(i)

    # -------------------------------------------------------------------------
    # Mutations
    # -------------------------------------------------------------------------

    def touch(self, i: int, now: int) -> int:
        """Update PV[i] for one access and return it."""
        if self.counters is not None:
            if self.counters[i] < LFU_COUNTER_MAX:
                self.counters[i] += 1
            return int(self.counters[i])
        slot = self._slots.get(i)
        if slot is not None:
            self.timestamps[slot] = now
        return int(now)

    def write(self, i: int, row: np.ndarray) -> None:
        """Overwrite the resident copy of row i."""
        set_index, way = self._slots[i]
        self.rows[set_index, way] = row

    def admit_or_bypass(self, i: int, row: np.ndarray, pv_i: int) -> AdmitOutcome:
        """Run the bypass-or-replace decision for non-resident row i."""
        if i in self._slots:
            raise ValueError(f"Row {i} is already resident")
        cfg = self.config
        set_index = hash_index(i, cfg)
        tags = self.tags[set_index]

        empty = np.flatnonzero(tags == EMPTY)
        if empty.size:
            way = int(empty[0])
            self._install(i, row, pv_i, set_index, way)
            return AdmitOutcome(AdmitKind.CACHED_NO_EVICTION, way=way)

        if cfg.associativity == 1 and cfg.policy is ReplacementPolicy.LRU:
            way = 0
        else:
            priorities = self.set_priorities(set_index)
            way = int(np.argmin(priorities))
            if pv_i <= priorities[way]:
                return AdmitOutcome(AdmitKind.BYPASSED, row=np.asarray(row, dtype=np.float32))

        victim = int(tags[way])
        victim_row = self.rows[set_index, way].copy()
        del self._slots[victim]
        self._install(i, row, pv_i, set_index, way)
        return AdmitOutcome(
            AdmitKind.CACHED_EVICTING, way=way, victim=victim, victim_row=victim_row
        )

    def evict(self, i: int) -> np.ndarray:
        """Remove row i and return its FP32 copy."""
        set_index, way = self._slots.pop(i)
        row = self.rows[set_index, way].copy()
        self.tags[set_index, way] = EMPTY
        self.timestamps[set_index, way] = 0
        self.rows[set_index, way] = 0.0
        return row

    def clear(self) -> None:
        """Empty every way. LFU counters belong to the table and survive."""
        self.tags.fill(EMPTY)
        self.rows.fill(0.0)
        self.timestamps.fill(0)
        self._slots.clear()

    def _install(self, i: int, row: np.ndarray, pv_i: int, set_index: int, way: int) -> None:
        self.tags[set_index, way] = i
        self.rows[set_index, way] = row
        self.timestamps[set_index, way] = pv_i if self.counters is None else 0
        self._slots[i] = (set_index, way)


# =============================================================================
# END OF CACHE CORE MODULE
# =============================================================================
