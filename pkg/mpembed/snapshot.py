# =============================================================================
# MPEMBED - SNAPSHOT FILES
# =============================================================================
# Versioned binary snapshot of a flushed embedding table.
#
# LAYOUT (little-endian):
# - header (46 bytes): magic "MPEMBSNP", version u16, num_rows u64, dim u32,
#   bitwidth u8, rounding u8, has_cache u8, policy u8, hash u8, pad u8,
#   associativity u16, num_sets u32, seed u64, table_id u32
# - rows: num_rows records
#     INT8/4/2: scale f32, bias f32, ceil(dim * bitwidth / 8) code bytes
#     FP16: dim x f16     FP32: dim x f32
#
# Cache contents and LFU counters are not persisted: the table is flushed
# before writing and a loaded embedding starts with an empty cache.
# =============================================================================

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .cache_core import CacheConfig, HashKind, HighPrecisionCache, ReplacementPolicy
from .mp_table import MixedPrecisionEmbedding, QuantizedTable
from .numerics import HEADER_BYTES, Precision, RoundingMode, payload_nbytes

MAGIC = b"MPEMBSNP"
VERSION = 1
HEADER_FORMAT = "<8sHQIBBBBBxHIQI"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)

_ROUNDING_CODES = {RoundingMode.NEAREST: 0, RoundingMode.STOCHASTIC: 1}
_POLICY_CODES = {ReplacementPolicy.LRU: 0, ReplacementPolicy.LFU: 1}
_HASH_CODES = {HashKind.MODULO: 0, HashKind.MULTIPLICATIVE: 1}


def _decode(codes: dict, value: int, what: str):
    for key, code in codes.items():
        if code == value:
            return key
    raise ValueError(f"Snapshot has unknown {what} code {value}")


@dataclass(frozen=True)
class SnapshotHeader:
    num_rows: int
    dim: int
    precision: Precision
    rounding: RoundingMode
    cache: Optional[CacheConfig]
    seed: int
    table_id: int
    version: int = VERSION

    @property
    def row_nbytes(self) -> int:
        if self.precision.is_integer:
            return HEADER_BYTES + payload_nbytes(self.dim, self.precision.bitwidth)
        return self.dim * self.precision.bitwidth // 8

    def pack(self) -> bytes:
        cache = self.cache
        return struct.pack(
            HEADER_FORMAT,
            MAGIC,
            self.version,
            self.num_rows,
            self.dim,
            self.precision.bitwidth,
            _ROUNDING_CODES[self.rounding],
            1 if cache else 0,
            _POLICY_CODES[cache.policy] if cache else 0,
            _HASH_CODES[cache.hash] if cache else 0,
            cache.associativity if cache else 0,
            cache.num_sets if cache else 0,
            self.seed,
            self.table_id,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "SnapshotHeader":
        if len(data) < HEADER_SIZE:
            raise ValueError(f"Snapshot header needs {HEADER_SIZE} bytes, got {len(data)}")
        (magic, version, num_rows, dim, bitwidth, rounding, has_cache, policy,
         hash_code, associativity, num_sets, seed, table_id) = struct.unpack(
            HEADER_FORMAT, data[:HEADER_SIZE]
        )
        if magic != MAGIC:
            raise ValueError(f"Not a snapshot file (magic {magic!r})")
        if version != VERSION:
            raise ValueError(f"Unsupported snapshot version {version}")
        cache = None
        if has_cache:
            cache = CacheConfig(
                num_sets,
                associativity,
                dim,
                _decode(_POLICY_CODES, policy, "policy"),
                _decode(_HASH_CODES, hash_code, "hash"),
            )
        return cls(
            num_rows=num_rows,
            dim=dim,
            precision=Precision(bitwidth),
            rounding=_decode(_ROUNDING_CODES, rounding, "rounding"),
            cache=cache,
            seed=seed,
            table_id=table_id,
            version=version,
        )


def snapshot_bytes(emb: MixedPrecisionEmbedding) -> bytes:
    """Flush `emb` and serialize it."""
    emb.flush()
    table = emb.table
    header = SnapshotHeader(
        num_rows=table.num_rows,
        dim=table.dim,
        precision=table.precision,
        rounding=emb.rounding,
        cache=emb.cache.config if emb.cache is not None else None,
        seed=emb.seed,
        table_id=emb.table_id,
    )
    if table.precision.is_integer:
        params = table.params.astype("<f4").view(np.uint8).reshape(table.num_rows, HEADER_BYTES)
        body = np.concatenate([params, table.payload], axis=1).tobytes()
    else:
        dtype = "<f2" if table.precision is Precision.FP16 else "<f4"
        body = table.values.astype(dtype).tobytes()
    return header.pack() + body


def save_snapshot(emb: MixedPrecisionEmbedding, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(snapshot_bytes(emb))
    return path


def read_header(path: Union[str, Path]) -> SnapshotHeader:
    with open(path, "rb") as handle:
        return SnapshotHeader.unpack(handle.read(HEADER_SIZE))


def load_snapshot(path: Union[str, Path]) -> MixedPrecisionEmbedding:
    """
    Rebuild an embedding from a snapshot file.

    Only the table is stored. The loaded embedding starts at iteration 0 with
    zero per-row write counters, so its stochastic-rounding streams restart
    rather than continue those of the saved run.
    """
    data = Path(path).read_bytes()
    header = SnapshotHeader.unpack(data)
    body = np.frombuffer(data, dtype=np.uint8, offset=HEADER_SIZE)
    expected = header.num_rows * header.row_nbytes
    if body.size != expected:
        raise ValueError(f"Snapshot body is {body.size} bytes, expected {expected}")

    table = QuantizedTable(header.num_rows, header.dim, header.precision)
    records = body.reshape(header.num_rows, header.row_nbytes)
    if header.precision.is_integer:
        table.params[:] = records[:, :HEADER_BYTES].copy().view("<f4")
        table.payload[:] = records[:, HEADER_BYTES:]
    else:
        dtype = "<f2" if header.precision is Precision.FP16 else "<f4"
        table.values[:] = records.copy().view(dtype)

    cache = HighPrecisionCache(header.cache, header.num_rows) if header.cache else None
    return MixedPrecisionEmbedding(table, cache, header.rounding, header.seed, header.table_id)


# =============================================================================
# END OF SNAPSHOT MODULE
# =============================================================================
