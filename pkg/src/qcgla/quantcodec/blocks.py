"""
GGML-style quantized block containers and their quantizers.

Each container holds a *run* of ``n`` blocks as parallel numpy arrays (one
leading block axis), so a single block is simply a run of length one.  All
quantizers round half away from zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qcgla.errors import InvalidInput, ShapeError

QK8_0 = 32
QK_K = 256
SUB_K = 16

BLOCK_Q8_0_BYTES = 2 + QK8_0
BLOCK_Q3_K_BYTES = QK_K // 8 + QK_K // 4 + 12 + 2
BLOCK_Q3_K_REPACKED_BYTES = (QK_K // 8) * 8 + 2
BLOCK_Q8_K_BYTES = 4 + QK_K


def round_away(x: np.ndarray) -> np.ndarray:
    """Round half away from zero, exact for all finite doubles."""
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    fl = np.floor(a)
    return np.sign(x) * (fl + np.floor(2.0 * (a - fl)))


def _as_rows(x, width: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.size % width:
        raise ShapeError(f"element count {x.size} is not a multiple of {width}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("input contains non-finite values")
    return x.reshape(-1, width)


def _check_scale(d: np.ndarray, name: str) -> None:
    if np.any(np.isnan(d)) or np.any(d < 0):
        raise InvalidInput(f"{name}: scale must be a non-negative number")
    if np.any(np.isinf(d)):
        raise InvalidInput(f"{name}: scale overflows its storage type")


@dataclass(eq=False)
class BlockQ8_0:
    """Run of Q8_0 blocks: ``d`` float16 (n,), ``q`` int8 (n, 32)."""

    d: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.d = np.ascontiguousarray(self.d, dtype=np.float16).reshape(-1)
        self.q = np.ascontiguousarray(self.q, dtype=np.int8).reshape(-1, QK8_0)
        if self.d.shape[0] != self.q.shape[0]:
            raise ShapeError("scale and quant block counts differ")
        _check_scale(self.d, "Q8_0")
        if np.any(self.q == -128):
            raise InvalidInput("Q8_0 quants must lie in [-127, 127]")
        if np.any((self.d == 0) & np.any(self.q != 0, axis=1)):
            raise InvalidInput("Q8_0 block with zero scale has nonzero quants")

    def __len__(self) -> int:
        return self.d.shape[0]

    def __getitem__(self, idx) -> BlockQ8_0:
        idx = _as_slice(idx)
        return BlockQ8_0(self.d[idx], self.q[idx])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BlockQ8_0)
            and np.array_equal(self.d.view(np.uint16), other.d.view(np.uint16))
            and np.array_equal(self.q, other.q)
        )


@dataclass(eq=False)
class SuperblockQ3K:
    """Run of Q3_K superblocks in field view.

    ``scales`` holds 16 unsigned 6-bit codes per superblock (signed value is
    code - 32) and ``quants`` 256 unsigned 3-bit codes (signed value is
    code - 4).
    """

    d: np.ndarray
    scales: np.ndarray
    quants: np.ndarray

    def __post_init__(self):
        self.d = np.ascontiguousarray(self.d, dtype=np.float16).reshape(-1)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.uint8).reshape(-1, QK_K // SUB_K)
        self.quants = np.ascontiguousarray(self.quants, dtype=np.uint8).reshape(-1, QK_K)
        if not (self.d.shape[0] == self.scales.shape[0] == self.quants.shape[0]):
            raise ShapeError("superblock field counts differ")
        _check_scale(self.d, "Q3_K")
        if np.any(self.scales > 63) or np.any(self.quants > 7):
            raise InvalidInput("Q3_K scale codes must be 6-bit and quant codes 3-bit")

    def __len__(self) -> int:
        return self.d.shape[0]

    def __getitem__(self, idx) -> SuperblockQ3K:
        idx = _as_slice(idx)
        return SuperblockQ3K(self.d[idx], self.scales[idx], self.quants[idx])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SuperblockQ3K)
            and np.array_equal(self.d.view(np.uint16), other.d.view(np.uint16))
            and np.array_equal(self.scales, other.scales)
            and np.array_equal(self.quants, other.quants)
        )


@dataclass(eq=False)
class RepackedQ3K:
    """Run of Q3_K superblocks in the CVT53 word layout: ``words`` uint64 (n, 32)."""

    d: np.ndarray
    words: np.ndarray

    def __post_init__(self):
        self.d = np.ascontiguousarray(self.d, dtype=np.float16).reshape(-1)
        self.words = np.ascontiguousarray(self.words, dtype=np.uint64).reshape(-1, QK_K // 8)
        if self.d.shape[0] != self.words.shape[0]:
            raise ShapeError("scale and word counts differ")
        _check_scale(self.d, "Q3_K_REPACKED")
        pad = np.uint64(0xFFFE0000FFFE0000)
        if np.any(self.words & pad):
            raise InvalidInput("repacked word has nonzero pad bits")

    def __len__(self) -> int:
        return self.d.shape[0]

    def __getitem__(self, idx) -> RepackedQ3K:
        idx = _as_slice(idx)
        return RepackedQ3K(self.d[idx], self.words[idx])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, RepackedQ3K)
            and np.array_equal(self.d.view(np.uint16), other.d.view(np.uint16))
            and np.array_equal(self.words, other.words)
        )


@dataclass(eq=False)
class BlockQ8K:
    """Run of 256-element activation blocks: ``d`` float32 (n,), ``q`` int8 (n, 256)."""

    d: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.d = np.ascontiguousarray(self.d, dtype=np.float32).reshape(-1)
        self.q = np.ascontiguousarray(self.q, dtype=np.int8).reshape(-1, QK_K)
        if self.d.shape[0] != self.q.shape[0]:
            raise ShapeError("scale and quant block counts differ")
        _check_scale(self.d, "Q8_K")
        if np.any(self.q == -128):
            raise InvalidInput("Q8_K quants must lie in [-127, 127]")

    def __len__(self) -> int:
        return self.d.shape[0]

    def __getitem__(self, idx) -> BlockQ8K:
        idx = _as_slice(idx)
        return BlockQ8K(self.d[idx], self.q[idx])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BlockQ8K)
            and np.array_equal(self.d.view(np.uint32), other.d.view(np.uint32))
            and np.array_equal(self.q, other.q)
        )


def _as_slice(idx):
    # keep the leading block axis when indexing a single block
    if isinstance(idx, (int, np.integer)):
        return slice(idx, idx + 1) if idx != -1 else slice(-1, None)
    return idx


# ---------------------------------------------------------------------------
# quantizers
# ---------------------------------------------------------------------------


def quantize_q8_0(x) -> BlockQ8_0:
    rows = _as_rows(x, QK8_0).astype(np.float64)
    amax = np.abs(rows).max(axis=1)
    d = (amax / 127.0).astype(np.float16)
    _check_scale(d, "Q8_0")
    df = d.astype(np.float64)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(df > 0, round_away(rows / df), 0.0)
    q = np.clip(q, -127, 127)
    return BlockQ8_0(d, q.astype(np.int8))


def dequantize_q8_0(b: BlockQ8_0) -> np.ndarray:
    return (b.d.astype(np.float32)[:, None] * b.q.astype(np.float32)).reshape(-1)


def quantize_q8_k(x) -> BlockQ8K:
    rows = _as_rows(x, QK_K).astype(np.float64)
    amax = np.abs(rows).max(axis=1)
    d = (amax / 127.0).astype(np.float32)
    _check_scale(d, "Q8_K")
    df = d.astype(np.float64)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(df > 0, round_away(rows / df), 0.0)
    q = np.clip(q, -127, 127)
    return BlockQ8K(d, q.astype(np.int8))


def dequantize_q8_k(b: BlockQ8K) -> np.ndarray:
    return (b.d[:, None] * b.q.astype(np.float32)).reshape(-1)


def quantize_q3_k(x) -> SuperblockQ3K:
    """Greedy two-level fit of 256-element rows.

    Each 16-element sub-block gets a float scale that maps its largest
    magnitude element onto quant -4.  The super-scale maps the largest
    sub-scale magnitude onto 31, then sub-scale codes and quant codes are
    rounded in turn against the stored (float16) super-scale.
    """
    rows = _as_rows(x, QK_K).astype(np.float64)
    n = rows.shape[0]
    sub = rows.reshape(n, QK_K // SUB_K, SUB_K)
    idx = np.abs(sub).argmax(axis=2)
    peak = np.take_along_axis(sub, idx[..., None], axis=2)[..., 0]
    sub_scale = -peak / 4.0
    d = (np.abs(sub_scale).max(axis=1) / 31.0).astype(np.float16)
    _check_scale(d, "Q3_K")
    df = d.astype(np.float64)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        sc = np.where(df > 0, round_away(sub_scale / df), 0.0)
    sc = np.clip(sc, -32, 31)
    eff = (df * sc)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(eff != 0, round_away(sub / eff), 0.0)
    q = np.clip(q, -4, 3)
    return SuperblockQ3K(d, (sc + 32).astype(np.uint8), (q + 4).reshape(n, QK_K).astype(np.uint8))


def dequantize_q3_k(b: SuperblockQ3K) -> np.ndarray:
    sc = b.scales.astype(np.int32) - 32
    q = b.quants.astype(np.int32).reshape(-1, QK_K // SUB_K, SUB_K) - 4
    iq = (sc[..., None] * q).astype(np.float32)
    return (b.d.astype(np.float32)[:, None, None] * iq).reshape(-1)


# ---------------------------------------------------------------------------
# repacking into the CVT53 word layout
# ---------------------------------------------------------------------------


def repack_scale(scales_raw) -> np.ndarray:
    """6-bit scale code -> signed 5-bit scale whose double approximates it within one step."""
    signed = np.asarray(scales_raw, dtype=np.int64) - 32
    return np.clip(round_away(signed / 2.0), -16, 15).astype(np.int8)


def repack_q3_k(b: SuperblockQ3K) -> RepackedQ3K:
    from qcgla.isa import pack_cvt53

    n = len(b)
    s5 = repack_scale(b.scales)
    # word w carries elements 8w..8w+7; both of its ways lie in sub-block w // 2
    way_scale = np.repeat(s5, 2, axis=1)[:, :, None].repeat(2, axis=2)
    codes = b.quants.reshape(n, QK_K // 8, 2, 4)
    return RepackedQ3K(b.d.copy(), pack_cvt53(way_scale, codes))


def unrepack_codes(r: RepackedQ3K) -> tuple[np.ndarray, np.ndarray]:
    """Recover (5-bit sub-scales (n, 16), quant codes (n, 256)) from repacked words."""
    from qcgla.isa import cvt53_fields

    s5, q = cvt53_fields(r.words)
    return s5[:, ::2, 0].astype(np.int8), q.reshape(len(r), QK_K).astype(np.uint8)


# ---------------------------------------------------------------------------
# byte layouts
# ---------------------------------------------------------------------------

_Q8_0_DTYPE = np.dtype([("d", "<f2"), ("q", "i1", QK8_0)])
_Q3_K_DTYPE = np.dtype(
    [("hmask", "u1", QK_K // 8), ("qs", "u1", QK_K // 4), ("scales", "u1", 12), ("d", "<f2")]
)
_Q3_K_REPACKED_DTYPE = np.dtype([("words", "<u8", QK_K // 8), ("d", "<f2")])
_Q8_K_DTYPE = np.dtype([("d", "<f4"), ("q", "i1", QK_K)])

assert _Q8_0_DTYPE.itemsize == BLOCK_Q8_0_BYTES
assert _Q3_K_DTYPE.itemsize == BLOCK_Q3_K_BYTES
assert _Q3_K_REPACKED_DTYPE.itemsize == BLOCK_Q3_K_REPACKED_BYTES
assert _Q8_K_DTYPE.itemsize == BLOCK_Q8_K_BYTES


def _from_buffer(raw: bytes, dtype: np.dtype) -> np.ndarray:
    if len(raw) % dtype.itemsize:
        raise ShapeError(f"{len(raw)} bytes is not a whole number of {dtype.itemsize}-byte blocks")
    return np.frombuffer(raw, dtype=dtype)


def pack_q8_0(b: BlockQ8_0) -> bytes:
    out = np.empty(len(b), dtype=_Q8_0_DTYPE)
    out["d"] = b.d
    out["q"] = b.q
    return out.tobytes()


def unpack_q8_0(raw: bytes) -> BlockQ8_0:
    a = _from_buffer(raw, _Q8_0_DTYPE)
    return BlockQ8_0(a["d"], a["q"])


def pack_q3_k(b: SuperblockQ3K) -> bytes:
    """Serialize to the 110-byte GGML block layout (hmask, qs, scales, d)."""
    n = len(b)
    q = b.quants
    high = (q >> 2) & 1
    low = q & 3
    # hmask: bit j of byte l is the high bit of element 32*j + l
    hm = high.reshape(n, 8, 32).astype(np.uint8) << np.arange(8, dtype=np.uint8)[None, :, None]
    hmask = np.bitwise_or.reduce(hm, axis=1)
    # qs: byte 32*h + l, bits 2s..2s+1 hold element 128*h + 32*s + l
    ql = low.reshape(n, 2, 4, 32).astype(np.uint8) << (2 * np.arange(4, dtype=np.uint8))[None, None, :, None]
    qs = np.bitwise_or.reduce(ql, axis=2).reshape(n, 64)
    sc = b.scales
    lo4 = sc & 0x0F
    hi2 = (sc >> 4) & 0x03
    scales = np.zeros((n, 12), dtype=np.uint8)
    scales[:, :8] = lo4[:, :8] | (lo4[:, 8:] << 4)
    h = hi2.reshape(n, 4, 4) << (2 * np.arange(4, dtype=np.uint8))[None, :, None]
    scales[:, 8:] = np.bitwise_or.reduce(h, axis=1)
    out = np.empty(n, dtype=_Q3_K_DTYPE)
    out["hmask"] = hmask
    out["qs"] = qs
    out["scales"] = scales
    out["d"] = b.d
    return out.tobytes()


def unpack_q3_k(raw: bytes) -> SuperblockQ3K:
    a = _from_buffer(raw, _Q3_K_DTYPE)
    n = a.shape[0]
    hmask = a["hmask"].reshape(n, 1, 32)
    high = (hmask >> np.arange(8, dtype=np.uint8)[None, :, None]) & 1
    qs = a["qs"].reshape(n, 2, 1, 32)
    low = (qs >> (2 * np.arange(4, dtype=np.uint8))[None, None, :, None]) & 3
    quants = (low.reshape(n, QK_K) | (high.reshape(n, QK_K) << 2)).astype(np.uint8)
    s = a["scales"]
    lo4 = np.concatenate([s[:, :8] & 0x0F, s[:, :8] >> 4], axis=1)
    hi2 = ((s[:, 8:12].reshape(n, 1, 4) >> (2 * np.arange(4, dtype=np.uint8))[None, :, None]) & 3).reshape(n, 16)
    scales = (lo4 | (hi2 << 4)).astype(np.uint8)
    return SuperblockQ3K(a["d"], scales, quants)


def pack_q3_k_repacked(r: RepackedQ3K) -> bytes:
    out = np.empty(len(r), dtype=_Q3_K_REPACKED_DTYPE)
    out["words"] = r.words
    out["d"] = r.d
    return out.tobytes()


def unpack_q3_k_repacked(raw: bytes) -> RepackedQ3K:
    a = _from_buffer(raw, _Q3_K_REPACKED_DTYPE)
    return RepackedQ3K(a["d"], a["words"])


def pack_q8_k(b: BlockQ8K) -> bytes:
    out = np.empty(len(b), dtype=_Q8_K_DTYPE)
    out["d"] = b.d
    out["q"] = b.q
    return out.tobytes()


def unpack_q8_k(raw: bytes) -> BlockQ8K:
    a = _from_buffer(raw, _Q8_K_DTYPE)
    return BlockQ8K(a["d"], a["q"])
