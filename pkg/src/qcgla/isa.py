"""
Bit-exact semantics of the custom PE instructions used by the dot-product kernels.

A machine word is a 64-bit unsigned integer holding two independent 32-bit
ways (way0 = low half, way1 = high half).  Depending on the instruction a way
is read as

  * four packed signed 8-bit lanes (lane k in bits 8k..8k+7),
  * a signed 24-bit integer sign-extended to 32 bits, or
  * the CVT53 layout: bits 16..12 a signed 5-bit scale, bits 11..0 four
    3-bit quant codes (code k in bits 3k..3k+2), bits 31..17 zero.

Every operation is vectorised: it accepts a scalar or an array of words
(anything ``np.asarray(..., dtype=np.uint64)`` accepts) and returns an
array of the broadcast shape.
"""

from __future__ import annotations

import enum

import numpy as np

from qcgla.errors import InvalidOperand, Overflow24

Word64 = np.uint64

MASK32 = np.uint64(0xFFFFFFFF)
INT24_MIN = -(1 << 23)
INT24_MAX = (1 << 23) - 1


class PEOpCode(enum.Enum):
    SML8 = "SML8"
    AD24 = "AD24"
    CVT53 = "CVT53"
    FMUL32 = "FMUL32"
    MOVE = "MOVE"


def as_words(w) -> np.ndarray:
    return np.array(w, dtype=np.uint64, order="C")


def split_ways(w) -> tuple[np.ndarray, np.ndarray]:
    """Return (way0, way1) as uint32 arrays."""
    w = as_words(w)
    return (w & MASK32).astype(np.uint32), (w >> np.uint64(32)).astype(np.uint32)


def join_ways(way0, way1) -> np.ndarray:
    lo = np.asarray(way0).astype(np.uint32).astype(np.uint64)
    hi = np.asarray(way1).astype(np.uint32).astype(np.uint64)
    return lo | (hi << np.uint64(32))


def lanes_i8(w) -> np.ndarray:
    """Signed 8-bit lanes of each word, shape (..., 2, 4) indexed [way, lane]."""
    w = as_words(w).astype("<u8")
    return w.reshape(w.shape + (1,)).view(np.int8).reshape(w.shape + (2, 4))


def pack_i8_lanes(values) -> np.ndarray:
    """Inverse of :func:`lanes_i8`; ``values`` has a trailing axis of 8 elements."""
    v = np.ascontiguousarray(values, dtype=np.int8)
    if v.shape[-1] != 8:
        raise ValueError("need 8 signed bytes per word")
    return v.view("<u8").reshape(v.shape[:-1]).astype(np.uint64)


def pack_int24(way0, way1) -> np.ndarray:
    """Build words from two signed integers already known to fit in 24 bits."""
    w0 = np.asarray(way0, dtype=np.int64).astype(np.int32).view(np.uint32)
    w1 = np.asarray(way1, dtype=np.int64).astype(np.int32).view(np.uint32)
    return join_ways(w0, w1)


def unpack_int24(w) -> tuple[np.ndarray, np.ndarray]:
    """Signed 24-bit values of both ways; rejects non-canonical sign extension."""
    w0, w1 = split_ways(w)
    v0 = w0.view(np.int32).astype(np.int64)
    v1 = w1.view(np.int32).astype(np.int64)
    bad = (v0 < INT24_MIN) | (v0 > INT24_MAX) | (v1 < INT24_MIN) | (v1 > INT24_MAX)
    if np.any(bad):
        raise InvalidOperand("word is not in sign-extended 24-bit form")
    return v0, v1


def op_sml8(a, b) -> np.ndarray:
    """Per way: sum of the four signed 8-bit lane products, sign-extended from 24 bits."""
    pa = lanes_i8(a).astype(np.int32)
    pb = lanes_i8(b).astype(np.int32)
    s = (pa * pb).sum(axis=-1)
    return pack_int24(s[..., 0], s[..., 1])


def op_ad24(a, b) -> np.ndarray:
    a0, a1 = unpack_int24(a)
    b0, b1 = unpack_int24(b)
    s0 = a0 + b0
    s1 = a1 + b1
    if np.any((s0 < INT24_MIN) | (s0 > INT24_MAX) | (s1 < INT24_MIN) | (s1 > INT24_MAX)):
        raise Overflow24("24-bit lane sum out of range")
    return pack_int24(s0, s1)


def cvt53_fields(w) -> tuple[np.ndarray, np.ndarray]:
    """Decode CVT53 ways into (scale5 (..., 2), quant codes (..., 2, 4))."""
    ways = np.stack(split_ways(w), axis=-1)
    if np.any(ways >> np.uint32(17)):
        raise InvalidOperand("CVT53 operand has nonzero pad bits 31..17")
    s5 = ((ways >> np.uint32(12)) & np.uint32(0x1F)).astype(np.int32)
    s5 = np.where(s5 >= 16, s5 - 32, s5)
    shifts = np.arange(0, 12, 3, dtype=np.uint32)
    q = ((ways[..., None] >> shifts) & np.uint32(7)).astype(np.int32)
    return s5, q


def pack_cvt53(scale5, codes) -> np.ndarray:
    """Build CVT53 ways. ``scale5`` shape (..., 2) in [-16, 15]; ``codes`` (..., 2, 4) in [0, 7]."""
    s = np.asarray(scale5, dtype=np.int64)
    q = np.asarray(codes, dtype=np.int64)
    if np.any((s < -16) | (s > 15)) or np.any((q < 0) | (q > 7)):
        raise InvalidOperand("CVT53 field out of range")
    ways = (s & 0x1F) << 12
    ways = ways | (q << np.arange(0, 12, 3)).sum(axis=-1)
    return join_ways(ways[..., 0], ways[..., 1])


def op_cvt53(w, a) -> np.ndarray:
    """Scaled 3-bit x 8-bit multiply-add: per way sum_k (2*s5)*(q_k-4)*a_k."""
    s5, q = cvt53_fields(w)
    act = lanes_i8(a).astype(np.int32)
    s = ((q - 4) * act).sum(axis=-1) * (2 * s5)
    return pack_int24(s[..., 0], s[..., 1])


def op_move(w) -> np.ndarray:
    """Route a word through a PE with its two ways exchanged."""
    w0, w1 = split_ways(w)
    return join_ways(w1, w0)


def pack_f32_pair(x, y) -> np.ndarray:
    """Carry two binary32 values in one word (x in way0, y in way1)."""
    x = np.array(x, dtype=np.float32, order="C").view(np.uint32)
    y = np.array(y, dtype=np.float32, order="C").view(np.uint32)
    return join_ways(x, y)


def unpack_f32_pair(w) -> tuple[np.ndarray, np.ndarray]:
    w0, w1 = split_ways(w)
    return w0.view(np.float32), w1.view(np.float32)


def op_fmul32(x, y) -> np.ndarray:
    return np.multiply(np.asarray(x, dtype=np.float32), np.asarray(y, dtype=np.float32), dtype=np.float32)


def int24_to_f32(w, way: int = 0) -> np.ndarray:
    if way not in (0, 1):
        raise ValueError("way must be 0 or 1")
    return unpack_int24(w)[way].astype(np.float32)
