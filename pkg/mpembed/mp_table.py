# =============================================================================
# MPEMBED - MIXED-PRECISION EMBEDDING
# =============================================================================
# A low-precision table T augmented with an optional FP32 cache C.
#
# OPERATORS:
# - fetch(i):     cache hit -> FP32 resident copy; miss -> dequantized T[i]
# - update(i, x): touch PV[i]; resident -> overwrite C copy; otherwise run
#                 the admission rule:
#                   bypassed -> T[i] = quantize(x)
#                   evicting -> C gets x, T[victim] = quantize(victim row)
#                   no evict -> C gets x, T[i] left stale
# - flush():      quantize every resident back into T and empty C
#
# MEMORY ACCOUNTING (bits per table row, d = dimension, r = cache ratio):
# - FP32: 32d   FP16: 16d   INTN: N*d + 64
# - cache: 32d*r   tags: 32*r   LFU counters: 32 (when r > 0)
# - compression factor = total / 32d
# =============================================================================

import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional, Sequence, Union

import numpy as np

from .cache_core import (
    AdmitKind,
    CacheConfig,
    HashKind,
    HighPrecisionCache,
    ReplacementPolicy,
    VALID_ASSOCIATIVITIES,
)
from .numerics import (
    PackedRow,
    Precision,
    QuantParams,
    RoundingMode,
    _as_fp32_row,
    _quantize_codes,
    convert_fp16,
    dequantize_matrix,
    pack_codes,
    payload_nbytes,
)
from .rng import RngStream

logger = logging.getLogger(__name__)


# =============================================================================
# CONFIGURATION
# =============================================================================

@dataclass(frozen=True)
class EmbeddingConfig:
    """Everything needed to build one MixedPrecisionEmbedding."""
    dim: int = 16
    precision: Precision = Precision.INT8
    rounding: RoundingMode = RoundingMode.NEAREST
    cache_ratio: float = 0.0
    associativity: int = 1
    policy: ReplacementPolicy = ReplacementPolicy.LFU
    hash: HashKind = HashKind.MODULO
    min_rows_for_lowprec: int = 0

    def __post_init__(self):
        object.__setattr__(self, "precision", Precision.parse(self.precision))
        object.__setattr__(self, "rounding", RoundingMode.parse(self.rounding))
        object.__setattr__(self, "policy", ReplacementPolicy.parse(self.policy))
        object.__setattr__(self, "hash", HashKind.parse(self.hash))
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if not 0.0 <= self.cache_ratio <= 1.0:
            raise ValueError(f"cache_ratio must be in [0, 1], got {self.cache_ratio}")
        if self.associativity not in VALID_ASSOCIATIVITIES:
            raise ValueError(
                f"associativity must be one of {VALID_ASSOCIATIVITIES}, got {self.associativity}"
            )

    @property
    def label(self) -> str:
        text = f"{self.precision.name}/{self.rounding.value}"
        if self.cache_ratio > 0:
            text += f"/{self.policy.value}-{self.associativity}way-{self.cache_ratio:g}"
        return text


def cache_for_ratio(
    num_rows: int,
    dim: int,
    cache_ratio: float,
    associativity: int = 1,
    policy: ReplacementPolicy = ReplacementPolicy.LFU,
    hash_kind: HashKind = HashKind.MODULO,
) -> Optional[CacheConfig]:
    """
    Size a cache from the fraction of rows it should hold.

    Formula:
        cache_rows = round(ratio * N)
        n = max(1, cache_rows // alpha)

    Returns None for a zero-row cache.
    """
    cache_rows = int(round(cache_ratio * num_rows))
    if cache_rows <= 0:
        return None
    num_sets = max(1, cache_rows // associativity)
    return CacheConfig(num_sets, associativity, dim, policy, hash_kind)


# =============================================================================
# QUANTIZED TABLE
# =============================================================================

class QuantizedTable:
    """
    N rows of d elements stored at `precision`.

    Integer kinds keep an (N, nbytes) packed payload and (N, 2) FP32
    [scale, bias] params; FP16/FP32 keep the rows directly.
    """

    def __init__(self, num_rows: int, dim: int, precision: Precision):
        if num_rows < 1:
            raise ValueError(f"num_rows must be >= 1, got {num_rows}")
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.num_rows = num_rows
        self.dim = dim
        self.precision = Precision.parse(precision)
        if self.precision.is_integer:
            self.payload = np.zeros((num_rows, payload_nbytes(dim, self.precision.bitwidth)), dtype=np.uint8)
            self.params = np.zeros((num_rows, 2), dtype=np.float32)
            self.values = None
        else:
            dtype = np.float16 if self.precision is Precision.FP16 else np.float32
            self.payload = None
            self.params = None
            self.values = np.zeros((num_rows, dim), dtype=dtype)

    @property
    def bits_per_row(self) -> int:
        if self.precision.is_integer:
            return self.precision.bitwidth * self.dim + 64
        return self.precision.bitwidth * self.dim

    def check_index(self, i: int) -> None:
        if not 0 <= i < self.num_rows:
            raise IndexError(f"Row index {i} out of range [0, {self.num_rows})")

    def read_rows(self, indices: np.ndarray) -> np.ndarray:
        """Up-convert rows to FP32; indices must already be in range."""
        if self.precision.is_integer:
            return dequantize_matrix(
                self.payload[indices], self.params[indices], self.dim, self.precision.bitwidth
            )
        return self.values[indices].astype(np.float32)

    def read_row(self, i: int) -> np.ndarray:
        self.check_index(i)
        return self.read_rows(np.array([i]))[0]

    def write_row(
        self,
        i: int,
        row: np.ndarray,
        mode: RoundingMode,
        rng: Optional[RngStream],
    ) -> None:
        """Down-convert an FP32 row into storage."""
        self.check_index(i)
        values = _as_fp32_row(row)
        if values.size != self.dim:
            raise ValueError(f"Row has {values.size} elements, table dim is {self.dim}")
        if self.precision.is_integer:
            params, codes = _quantize_codes(values, self.precision, mode, rng)
            self.payload[i] = pack_codes(codes, self.precision.bitwidth)
            self.params[i] = (params.scale, params.bias)
        elif self.precision is Precision.FP16:
            self.values[i] = np.asarray(convert_fp16(values, mode, rng), dtype=np.float16)
        else:
            self.values[i] = values

    def packed_row(self, i: int) -> PackedRow:
        self.check_index(i)
        if not self.precision.is_integer:
            raise ValueError(f"{self.precision.name} rows are not packed")
        scale, bias = self.params[i]
        return PackedRow(
            QuantParams(float(scale), float(bias)),
            self.payload[i].copy(),
            self.dim,
            self.precision.bitwidth,
        )

    def row_bytes(self, i: int) -> bytes:
        """Storage bytes of row i in the snapshot layout."""
        if self.precision.is_integer:
            return self.packed_row(i).to_bytes()
        dtype = "<f2" if self.precision is Precision.FP16 else "<f4"
        return self.values[i].astype(dtype).tobytes()


# =============================================================================
# MIXED-PRECISION EMBEDDING
# =============================================================================

@dataclass
class EmbeddingStats:
    """Counters over update operations since the last reset."""
    hits: int = 0
    misses: int = 0
    bypasses: int = 0
    evictions: int = 0
    cold_fills: int = 0
    updates_per_row: Optional[np.ndarray] = None

    @property
    def updates(self) -> int:
        return self.hits + self.misses

    @property
    def hit_rate(self) -> float:
        return self.hits / self.updates if self.updates else 0.0


class MixedPrecisionEmbedding:
    """Low-precision table plus optional FP32 cache behind fetch/update."""

    def __init__(
        self,
        table: QuantizedTable,
        cache: Optional[HighPrecisionCache] = None,
        rounding: RoundingMode = RoundingMode.NEAREST,
        seed: int = 0,
        table_id: int = 0,
    ):
        if cache is not None and cache.config.row_dim != table.dim:
            raise ValueError(
                f"cache row_dim {cache.config.row_dim} does not match table dim {table.dim}"
            )
        self.table = table
        self.cache = cache
        self.rounding = RoundingMode.parse(rounding)
        self.seed = seed
        self.table_id = table_id
        self.iteration = 0
        self.clock = 0
        self.writes = np.zeros(table.num_rows, dtype=np.uint64)
        self.stats = EmbeddingStats(updates_per_row=np.zeros(table.num_rows, dtype=np.int64))

    @classmethod
    def build(
        cls,
        num_rows: int,
        config: EmbeddingConfig,
        seed: int = 0,
        table_id: int = 0,
    ) -> "MixedPrecisionEmbedding":
        """Create an all-zero embedding from an EmbeddingConfig."""
        precision = config.precision
        if num_rows < config.min_rows_for_lowprec:
            precision = Precision.FP32
        table = QuantizedTable(num_rows, config.dim, precision)
        cache_config = cache_for_ratio(
            num_rows, config.dim, config.cache_ratio,
            config.associativity, config.policy, config.hash,
        )
        cache = HighPrecisionCache(cache_config, num_rows) if cache_config else None
        return cls(table, cache, config.rounding, seed, table_id)

    @classmethod
    def from_dense(
        cls,
        weights: np.ndarray,
        config: EmbeddingConfig,
        seed: int = 0,
        table_id: int = 0,
    ) -> "MixedPrecisionEmbedding":
        """Build an embedding whose table holds the quantized image of `weights`."""
        weights = np.asarray(weights, dtype=np.float32)
        if weights.ndim != 2 or weights.shape[1] != config.dim:
            raise ValueError(f"weights must be (N, {config.dim}), got {weights.shape}")
        emb = cls.build(weights.shape[0], config, seed, table_id)
        for i in range(weights.shape[0]):
            emb._store(i, weights[i])
        return emb

    @property
    def num_rows(self) -> int:
        return self.table.num_rows

    @property
    def dim(self) -> int:
        return self.table.dim

    @property
    def precision(self) -> Precision:
        return self.table.precision

    def rng_for(self, i: int) -> RngStream:
        """Stream for the next write of row i."""
        return RngStream(
            self.seed, self.table_id, i, self.iteration, int(self.writes[i])
        )

    def _store(self, i: int, row: np.ndarray) -> None:
        rng = self.rng_for(i) if self.rounding is RoundingMode.STOCHASTIC else None
        self.table.write_row(i, row, self.rounding, rng)
        self.writes[i] += 1

    # -------------------------------------------------------------------------
    # Operators
    # -------------------------------------------------------------------------

    def fetch(self, i: int) -> np.ndarray:
        """FP32 view of row i; never touches priorities."""
        self.table.check_index(i)
        if self.cache is not None and i in self.cache:
            return self.cache.read(i)
        return self.table.read_row(i)

    def fetch_many(self, indices: Sequence[int]) -> np.ndarray:
        """Vectorized fetch of m rows into an (m, d) FP32 matrix."""
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.num_rows):
            bad = idx[(idx < 0) | (idx >= self.num_rows)][0]
            raise IndexError(f"Row index {bad} out of range [0, {self.num_rows})")
        out = self.table.read_rows(idx)
        if self.cache is not None and len(self.cache):
            for pos, i in enumerate(idx.tolist()):
                if i in self.cache:
                    out[pos] = self.cache.read(i)
        return out

    def update(self, i: int, x: np.ndarray) -> Optional[AdmitKind]:
        """
        Store the fully updated FP32 row x for index i.

        Returns:
            None on a cache hit, otherwise the admission outcome
            (BYPASSED when no cache is configured)
        """
        self.table.check_index(i)
        x = _as_fp32_row(x)
        if x.size != self.dim:
            raise ValueError(f"Row has {x.size} elements, embedding dim is {self.dim}")
        self.clock += 1
        self.stats.updates_per_row[i] += 1

        if self.cache is None:
            self.stats.misses += 1
            self._store(i, x)
            return AdmitKind.BYPASSED

        pv_i = self.cache.touch(i, self.clock)
        if self.cache.lookup(i) is not None:
            self.stats.hits += 1
            self.cache.write(i, x)
            return None

        self.stats.misses += 1
        outcome = self.cache.admit_or_bypass(i, x, pv_i)
        if outcome.kind is AdmitKind.BYPASSED:
            self.stats.bypasses += 1
            self._store(i, outcome.row)
        elif outcome.kind is AdmitKind.CACHED_EVICTING:
            self.stats.evictions += 1
            self._store(outcome.victim, outcome.victim_row)
        else:
            self.stats.cold_fills += 1
        return outcome.kind

    def flush(self) -> None:
        """Quantize every resident back into the table and empty the cache."""
        if self.cache is None or not len(self.cache):
            return
        residents = list(self.cache.residents())
        for i, row in residents:
            self._store(i, row)
        self.cache.clear()
        logger.debug("Flushed %d resident rows of table %d", len(residents), self.table_id)

    def advance_iteration(self) -> None:
        self.iteration += 1

    def reset_stats(self) -> None:
        self.stats = EmbeddingStats(updates_per_row=np.zeros(self.num_rows, dtype=np.int64))

    def to_dense(self) -> np.ndarray:
        """FP32 view of every row (cache-aware)."""
        return self.fetch_many(np.arange(self.num_rows))


# =============================================================================
# METRICS
# =============================================================================

def compression_factor(
    precision: Union[Precision, str],
    dim: int,
    cache_ratio: float = 0.0,
    policy: Union[ReplacementPolicy, str] = ReplacementPolicy.LFU,
) -> float:
    """
    Memory of table + cache + tags + counters relative to the FP32 table.

    Args:
        precision: table precision
        dim: embedding dimension d
        cache_ratio: fraction of rows held in the FP32 cache, [0, 1]
        policy: LFU adds a 32-bit counter per table row; LRU does not

    Returns:
        Compression factor (1.0 = FP32 with no cache)
    """
    precision = Precision.parse(precision)
    policy = ReplacementPolicy.parse(policy)
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not 0.0 <= cache_ratio <= 1.0:
        raise ValueError(f"cache_ratio must be in [0, 1], got {cache_ratio}")

    baseline = 32.0 * dim
    table_bits = precision.bitwidth * dim + (64 if precision.is_integer else 0)
    cache_bits = 32.0 * dim * cache_ratio
    tag_bits = 32.0 * cache_ratio
    counter_bits = 32.0 if (policy is ReplacementPolicy.LFU and cache_ratio > 0) else 0.0
    return (table_bits + cache_bits + tag_bits + counter_bits) / baseline


def format_factor(value: float, places: int = 5) -> str:
    """Fixed-point text rounded half-up (0.265625 -> '0.26563')."""
    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))


def accuracy_drop(acc_fp32: float, acc_lowprec: float) -> float:
    """
    Relative accuracy drop in percent.

    Formula:
        (acc_fp32 - acc_lowprec) / acc_fp32 * 100

    Negative when the low-precision model is more accurate.
    """
    if acc_fp32 <= 0:
        raise ValueError(f"acc_fp32 must be > 0, got {acc_fp32}")
    return (acc_fp32 - acc_lowprec) / acc_fp32 * 100.0


# =============================================================================
# END OF MIXED-PRECISION EMBEDDING MODULE
# =============================================================================
