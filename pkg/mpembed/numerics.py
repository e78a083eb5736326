# =============================================================================
# MPEMBED - NUMERICS
# =============================================================================
# Precision conversion for embedding rows: row-wise integer quantization,
# bit packing, FP16 conversion and the two rounding modes.
#
# FORMULAS (row r, bitwidth N, all arithmetic in FP32):
# - bias  = min(r)
# - scale = (max(r) - bias) / (2^N - 1)
# - code  = round((r[i] - bias) / scale), clamped to [0, 2^N - 1]
# - value = code * scale + bias
#
# ROUNDING:
# - nearest: ties go to the even neighbor
# - stochastic: upper neighbor with probability (x - lo) / (hi - lo)
#
# PACKED ROW LAYOUT:
# - header: scale, bias as little-endian binary32 (8 bytes)
# - codes: element j at bit (j * N) mod 8 of byte floor(j * N / 8)
# =============================================================================

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np

from .rng import RngStream

FP16_MAX = 65504.0
HEADER_BYTES = 8

ArrayLike = Union[float, np.ndarray, list]


class Precision(Enum):
    """Storage precision of an embedding table; the value is the bitwidth."""
    FP32 = 32
    FP16 = 16
    INT8 = 8
    INT4 = 4
    INT2 = 2

    @property
    def bitwidth(self) -> int:
        return self.value

    @property
    def is_integer(self) -> bool:
        return self.value <= 8

    @property
    def max_code(self) -> int:
        if not self.is_integer:
            raise ValueError(f"{self.name} has no integer code range")
        return (1 << self.value) - 1

    @classmethod
    def parse(cls, text: Union[str, "Precision"]) -> "Precision":
        if isinstance(text, Precision):
            return text
        try:
            return cls[str(text).strip().upper()]
        except KeyError:
            valid = ", ".join(p.name.lower() for p in cls)
            raise ValueError(f"Unknown precision '{text}' (expected one of: {valid})")


class RoundingMode(Enum):
    NEAREST = "nearest"
    STOCHASTIC = "stochastic"

    @classmethod
    def parse(cls, text: Union[str, "RoundingMode"]) -> "RoundingMode":
        if isinstance(text, RoundingMode):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise ValueError(f"Unknown rounding mode '{text}' (expected nearest or stochastic)")


@dataclass(frozen=True)
class QuantParams:
    """Per-row quantization parameters; both hold exact binary32 values."""
    scale: float
    bias: float


@dataclass(frozen=True)
class PackedRow:
    """Bit-packed integer codes of one row plus its quantization header."""
    params: QuantParams
    codes: np.ndarray  # uint8 payload, ceil(dim * bitwidth / 8) bytes
    dim: int
    bitwidth: int

    @property
    def nbytes(self) -> int:
        return HEADER_BYTES + int(self.codes.size)

    def unpacked_codes(self) -> np.ndarray:
        return unpack_codes(self.codes, self.dim, self.bitwidth)

    def to_bytes(self) -> bytes:
        header = np.array([self.params.scale, self.params.bias], dtype="<f4")
        return header.tobytes() + self.codes.astype(np.uint8).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, dim: int, bitwidth: int) -> "PackedRow":
        expected = packed_row_nbytes(dim, bitwidth)
        if len(data) != expected:
            raise ValueError(f"Packed row must be {expected} bytes, got {len(data)}")
        header = np.frombuffer(data[:HEADER_BYTES], dtype="<f4")
        codes = np.frombuffer(data[HEADER_BYTES:], dtype=np.uint8).copy()
        return cls(QuantParams(float(header[0]), float(header[1])), codes, dim, bitwidth)


def packed_row_nbytes(dim: int, bitwidth: int) -> int:
    """Bytes for one packed row: 8-byte header plus ceil(dim * bitwidth / 8)."""
    return HEADER_BYTES + payload_nbytes(dim, bitwidth)


def payload_nbytes(dim: int, bitwidth: int) -> int:
    return (dim * bitwidth + 7) // 8


# -----------------------------------------------------------------------------
# Input checks
# -----------------------------------------------------------------------------

def _as_fp32_row(row: ArrayLike) -> np.ndarray:
    values = np.asarray(row, dtype=np.float32)
    if values.ndim != 1:
        raise ValueError(f"Expected a 1-D row, got shape {values.shape}")
    if values.size == 0:
        raise ValueError("Cannot quantize an empty row (d = 0)")
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise ValueError(f"Row contains a non-finite value at element {bad}: {values[bad]}")
    return values


def _require_rng(mode: RoundingMode, rng: Optional[RngStream]) -> None:
    if mode is RoundingMode.STOCHASTIC and rng is None:
        raise ValueError("Stochastic rounding requires an RngStream")


# -----------------------------------------------------------------------------
# Rounding
# -----------------------------------------------------------------------------

def stochastic_round_unit(
    x: ArrayLike,
    x_lo: ArrayLike,
    x_hi: ArrayLike,
    rng: RngStream,
) -> Union[float, np.ndarray]:
    """
    Round x to one of its bracketing values x_lo < x_hi.

    Returns x_hi with probability (x - x_lo) / (x_hi - x_lo), else x_lo.
    Element j of an array input consumes draw j of `rng`.
    """
    x_arr, lo_arr, hi_arr = np.broadcast_arrays(
        np.asarray(x, dtype=np.float64),
        np.asarray(x_lo, dtype=np.float64),
        np.asarray(x_hi, dtype=np.float64),
    )
    if np.any(lo_arr >= hi_arr):
        raise ValueError("x_lo must be strictly below x_hi")
    if np.any((x_arr < lo_arr) | (x_arr > hi_arr)):
        raise ValueError("x must lie within [x_lo, x_hi]")

    prob_up = (x_arr - lo_arr) / (hi_arr - lo_arr)
    draws = rng.uniforms(x_arr.size).reshape(x_arr.shape)
    result = np.where(draws < prob_up, hi_arr, lo_arr)
    if result.ndim == 0:
        return float(result)
    return result


def _round_to_int(ideal: np.ndarray, mode: RoundingMode, rng: Optional[RngStream]) -> np.ndarray:
    if mode is RoundingMode.NEAREST:
        return np.rint(ideal)
    floor = np.floor(ideal)
    frac = ideal - floor
    draws = rng.uniforms(ideal.size)
    # frac == 0 never moves: representable values are left alone
    return floor + (draws < frac)


# -----------------------------------------------------------------------------
# Integer quantization
# -----------------------------------------------------------------------------

_SCALE_ITERATIONS = 8


def _settle_scale(lo: np.float32, hi: np.float32, max_code: int) -> np.float32:
    """
    Nudge (hi - lo) / max_code to a scale that the top code reproduces.

    A scale s is settled when the dequantized top code lo + max_code * s gives
    back s through the same division. Re-quantizing a dequantized row then
    sees identical (scale, bias). The map is monotone, so iteration stops at
    a fixed point within a few ulps of the start.
    """
    m = np.float32(max_code)
    scale = np.float32((hi - lo) / m)
    for _ in range(_SCALE_ITERATIONS):
        top = np.float32(np.float32(m * scale) + lo)
        settled = np.float32(np.float32(top - lo) / m)
        if settled == scale or settled <= 0:
            break
        scale = settled
    return scale


def _quantize_codes(
    values: np.ndarray,
    precision: Precision,
    mode: RoundingMode,
    rng: Optional[RngStream],
) -> Tuple[QuantParams, np.ndarray]:
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return QuantParams(0.0, float(lo)), np.zeros(values.size, dtype=np.uint8)

    max_code = precision.max_code
    scale = _settle_scale(lo, hi, max_code)
    params = QuantParams(float(scale), float(lo))
    ideal = (values - lo) / scale
    rounded = np.clip(_round_to_int(ideal, mode, rng), 0, max_code)

    # Values already on the grid keep their code; the range ends pin 0 and max_code
    near = np.clip(np.rint(ideal), 0, max_code)
    codes = rounded.copy()
    on_grid = np.zeros(values.size, dtype=bool)
    for step in (0, -1, 1):
        candidate = np.clip(near + step, 0, max_code)
        match = ~on_grid & (_dequantize_codes(candidate, params) == values)
        codes[match] = candidate[match]
        on_grid |= match
    codes[values == lo] = 0
    codes[values == hi] = max_code
    return params, codes.astype(np.uint8)


def _dequantize_codes(codes: np.ndarray, params: QuantParams) -> np.ndarray:
    return codes.astype(np.float32) * np.float32(params.scale) + np.float32(params.bias)


def quantize_row(
    row: ArrayLike,
    precision: Precision,
    mode: RoundingMode = RoundingMode.NEAREST,
    rng: Optional[RngStream] = None,
) -> PackedRow:
    """
    Quantize one FP32 row into a packed integer row.

    Args:
        row: d finite reals
        precision: an integer precision (INT8, INT4, INT2)
        mode: nearest or stochastic rounding
        rng: stream consumed element by element (stochastic only)

    Returns:
        PackedRow with (scale, bias) and bit-packed codes

    Notes:
        - Constant rows give scale 0, all-zero codes, bias = the constant
        - Codes are clamped to [0, 2^N - 1]
    """
    precision = Precision.parse(precision)
    if not precision.is_integer:
        raise ValueError(f"quantize_row needs an integer precision, got {precision.name}")
    _require_rng(mode, rng)
    values = _as_fp32_row(row)
    params, codes = _quantize_codes(values, precision, mode, rng)
    return PackedRow(params, pack_codes(codes, precision.bitwidth), values.size, precision.bitwidth)


def dequantize_row(packed: PackedRow, precision: Optional[Precision] = None) -> np.ndarray:
    """Expand a packed row back to FP32: codes[i] * scale + bias."""
    if precision is not None and Precision.parse(precision).bitwidth != packed.bitwidth:
        raise ValueError(
            f"Packed row has bitwidth {packed.bitwidth}, not {Precision.parse(precision).name}"
        )
    return _dequantize_codes(packed.unpacked_codes(), packed.params)


def dequantize_matrix(payload: np.ndarray, params: np.ndarray, dim: int, bitwidth: int) -> np.ndarray:
    """Vectorized dequantize of m packed rows; params is (m, 2) [scale, bias]."""
    codes = unpack_code_matrix(payload, dim, bitwidth).astype(np.float32)
    scale = params[:, 0:1].astype(np.float32)
    bias = params[:, 1:2].astype(np.float32)
    return codes * scale + bias


def fake_quantize_row(
    row: ArrayLike,
    precision: Precision,
    mode: RoundingMode = RoundingMode.NEAREST,
    rng: Optional[RngStream] = None,
) -> np.ndarray:
    """
    Quantize then dequantize, keeping the result in FP32.

    Matches dequantize_row(quantize_row(...)) bit for bit given the same rng.
    FP16 routes through convert_fp16; FP32 is the identity.
    """
    precision = Precision.parse(precision)
    _require_rng(mode, rng)
    values = _as_fp32_row(row)
    if precision is Precision.FP32:
        return values.copy()
    if precision is Precision.FP16:
        return convert_fp16(values, mode, rng)
    params, codes = _quantize_codes(values, precision, mode, rng)
    return _dequantize_codes(codes, params)


# -----------------------------------------------------------------------------
# FP16
# -----------------------------------------------------------------------------

def convert_fp16(
    x: ArrayLike,
    mode: RoundingMode = RoundingMode.NEAREST,
    rng: Optional[RngStream] = None,
) -> Union[float, np.ndarray]:
    """
    Round FP32 value(s) to binary16 and return them as FP32.

    Magnitudes beyond 65504 saturate to +-65504. Under stochastic rounding
    representable values are never moved.
    """
    _require_rng(mode, rng)
    values = np.asarray(x, dtype=np.float32)
    if np.any(np.isnan(values)):
        raise ValueError("convert_fp16 rejects NaN input")
    clipped = np.clip(values, np.float32(-FP16_MAX), np.float32(FP16_MAX))
    nearest = clipped.astype(np.float16)

    if mode is RoundingMode.NEAREST:
        result = nearest.astype(np.float32)
    else:
        back = nearest.astype(np.float32)
        toward = np.where(back < clipped, np.float16(np.inf), np.float16(-np.inf))
        other = np.nextafter(nearest, toward.astype(np.float16)).astype(np.float32)
        lo = np.minimum(back, other).astype(np.float64)
        hi = np.maximum(back, other).astype(np.float64)
        exact = back == clipped
        span = np.where(exact, 1.0, hi - lo)
        prob_up = np.where(exact, 0.0, (clipped.astype(np.float64) - lo) / span)
        draws = rng.uniforms(clipped.size).reshape(clipped.shape)
        picked = np.where(draws < prob_up, hi, lo)
        result = np.where(exact, back, picked).astype(np.float32)

    if result.ndim == 0:
        return float(result)
    return result


# -----------------------------------------------------------------------------
# Bit packing
# -----------------------------------------------------------------------------

def pack_codes(codes: np.ndarray, bitwidth: int) -> np.ndarray:
    """Pack codes little-endian into ceil(d * bitwidth / 8) bytes."""
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() > (1 << bitwidth) - 1):
        raise ValueError(f"Codes out of range for {bitwidth}-bit packing")
    codes = codes.astype(np.uint8)
    if bitwidth == 8:
        return codes.copy()
    shifts = np.arange(bitwidth, dtype=np.uint8)
    bits = (codes[:, None] >> shifts) & np.uint8(1)
    return np.packbits(bits.ravel(), bitorder="little")


def unpack_codes(payload: np.ndarray, dim: int, bitwidth: int) -> np.ndarray:
    return unpack_code_matrix(np.asarray(payload, dtype=np.uint8)[None, :], dim, bitwidth)[0]


def unpack_code_matrix(payload: np.ndarray, dim: int, bitwidth: int) -> np.ndarray:
    """Unpack an (m, nbytes) payload matrix into (m, dim) uint8 codes."""
    payload = np.asarray(payload, dtype=np.uint8)
    if bitwidth == 8:
        return payload[:, :dim].copy()
    bits = np.unpackbits(payload, axis=1, bitorder="little")[:, : dim * bitwidth]
    bits = bits.reshape(payload.shape[0], dim, bitwidth)
    weights = (1 << np.arange(bitwidth)).astype(np.uint8)
    return (bits * weights).sum(axis=2).astype(np.uint8)


# =============================================================================
# END OF NUMERICS MODULE
# =============================================================================
