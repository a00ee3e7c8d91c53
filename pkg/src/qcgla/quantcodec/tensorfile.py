"""
QCGT quantized tensor container.

Layout (little-endian)::

    magic   4s   b"QCGT"
    version u16  1
    dtype   u8   0=F32 1=Q8_0 2=Q3_K 3=Q3_K_REPACKED 4=Q8_K
    pad     u8   0
    rows    u32
    cols    u32
    blocks       rows * cols / block_len raw blocks, row-major
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from qcgla.errors import InvalidInput, ShapeError
from qcgla.quantcodec import blocks as B

MAGIC = b"QCGT"
VERSION = 1
_HEADER = struct.Struct("<4sHBBII")


class DType(enum.IntEnum):
    F32 = 0
    Q8_0 = 1
    Q3_K = 2
    Q3_K_REPACKED = 3
    Q8_K = 4

    @property
    def block_len(self) -> int:
        return _BLOCK_LEN[self]

    @property
    def block_bytes(self) -> int:
        return _BLOCK_BYTES[self]

    @classmethod
    def parse(cls, name: str) -> DType:
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise InvalidInput(f"unknown dtype {name!r}") from None


_BLOCK_LEN = {
    DType.F32: 1,
    DType.Q8_0: B.QK8_0,
    DType.Q3_K: B.QK_K,
    DType.Q3_K_REPACKED: B.QK_K,
    DType.Q8_K: B.QK_K,
}
_BLOCK_BYTES = {
    DType.F32: 4,
    DType.Q8_0: B.BLOCK_Q8_0_BYTES,
    DType.Q3_K: B.BLOCK_Q3_K_BYTES,
    DType.Q3_K_REPACKED: B.BLOCK_Q3_K_REPACKED_BYTES,
    DType.Q8_K: B.BLOCK_Q8_K_BYTES,
}

Blocks = Union[np.ndarray, B.BlockQ8_0, B.SuperblockQ3K, B.RepackedQ3K, B.BlockQ8K]

_CONTAINER = {
    DType.Q8_0: B.BlockQ8_0,
    DType.Q3_K: B.SuperblockQ3K,
    DType.Q3_K_REPACKED: B.RepackedQ3K,
    DType.Q8_K: B.BlockQ8K,
}


def encode_blocks(dtype: DType, blocks: Blocks) -> bytes:
    if dtype == DType.F32:
        return np.ascontiguousarray(blocks, dtype="<f4").tobytes()
    return {
        DType.Q8_0: B.pack_q8_0,
        DType.Q3_K: B.pack_q3_k,
        DType.Q3_K_REPACKED: B.pack_q3_k_repacked,
        DType.Q8_K: B.pack_q8_k,
    }[dtype](blocks)


def decode_blocks(dtype: DType, raw: bytes) -> Blocks:
    if dtype == DType.F32:
        if len(raw) % 4:
            raise ShapeError("F32 payload is not a whole number of floats")
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)
    return {
        DType.Q8_0: B.unpack_q8_0,
        DType.Q3_K: B.unpack_q3_k,
        DType.Q3_K_REPACKED: B.unpack_q3_k_repacked,
        DType.Q8_K: B.unpack_q8_k,
    }[dtype](raw)


@dataclass(eq=False)
class QuantizedTensor:
    dtype: DType
    rows: int
    cols: int
    blocks: Blocks

    def __post_init__(self):
        self.dtype = DType(self.dtype)
        if self.rows < 0 or self.cols < 0:
            raise ShapeError("negative tensor dimension")
        if self.cols % self.dtype.block_len:
            raise ShapeError(
                f"cols={self.cols} is not a multiple of the {self.dtype.name} block length {self.dtype.block_len}"
            )
        if self.dtype == DType.F32:
            self.blocks = np.ascontiguousarray(self.blocks, dtype=np.float32).reshape(-1)
        elif not isinstance(self.blocks, _CONTAINER[self.dtype]):
            raise InvalidInput(f"blocks are not {_CONTAINER[self.dtype].__name__}")
        if len(self.blocks) != self.block_count:
            raise ShapeError(f"expected {self.block_count} blocks, got {len(self.blocks)}")

    @property
    def blocks_per_row(self) -> int:
        return self.cols // self.dtype.block_len

    @property
    def block_count(self) -> int:
        return self.rows * self.blocks_per_row

    @property
    def nbytes(self) -> int:
        return self.block_count * self.dtype.block_bytes

    def row(self, i: int) -> Blocks:
        if not 0 <= i < self.rows:
            raise IndexError(i)
        n = self.blocks_per_row
        return self.blocks[i * n : (i + 1) * n]

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(MAGIC, VERSION, int(self.dtype), 0, self.rows, self.cols)
        return header + encode_blocks(self.dtype, self.blocks)

    @classmethod
    def from_bytes(cls, data: bytes) -> QuantizedTensor:
        if len(data) < _HEADER.size:
            raise InvalidInput("file too short for a QCGT header")
        magic, version, tag, _, rows, cols = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise InvalidInput(f"bad magic {magic!r}")
        if version != VERSION:
            raise InvalidInput(f"unsupported QCGT version {version}")
        try:
            dtype = DType(tag)
        except ValueError:
            raise InvalidInput(f"unknown dtype tag {tag}") from None
        payload = data[_HEADER.size :]
        if cols % dtype.block_len:
            raise ShapeError(f"cols={cols} is not a multiple of {dtype.block_len}")
        expected = rows * (cols // dtype.block_len) * dtype.block_bytes
        if len(payload) != expected:
            raise ShapeError(f"payload is {len(payload)} bytes, header implies {expected}")
        return cls(dtype, rows, cols, decode_blocks(dtype, payload))

    def dequantize(self) -> np.ndarray:
        """Float32 values as a (rows, cols) array."""
        fn = {
            DType.F32: lambda b: b,
            DType.Q8_0: B.dequantize_q8_0,
            DType.Q3_K: B.dequantize_q3_k,
            DType.Q8_K: B.dequantize_q8_k,
        }
        if self.dtype == DType.Q3_K_REPACKED:
            raise InvalidInput("repacked Q3_K has approximated scales; dequantize the source Q3_K instead")
        return fn[self.dtype](self.blocks).reshape(self.rows, self.cols)


def quantize_tensor(values, dtype: DType) -> QuantizedTensor:
    """Quantize a 2-D float array row by row."""
    x = np.asarray(values, dtype=np.float32)
    if x.ndim != 2:
        raise ShapeError("expected a 2-D array")
    rows, cols = x.shape
    dtype = DType(dtype)
    if cols % dtype.block_len:
        raise ShapeError(f"cols={cols} is not a multiple of the {dtype.name} block length {dtype.block_len}")
    if dtype == DType.F32:
        return QuantizedTensor(dtype, rows, cols, x.reshape(-1))
    if dtype == DType.Q8_0:
        blocks = B.quantize_q8_0(x)
    elif dtype == DType.Q8_K:
        blocks = B.quantize_q8_k(x)
    else:
        blocks = B.quantize_q3_k(x)
        if dtype == DType.Q3_K_REPACKED:
            blocks = B.repack_q3_k(blocks)
    return QuantizedTensor(dtype, rows, cols, blocks)


def read_tensor(path: str | os.PathLike) -> QuantizedTensor:
    with open(path, "rb") as f:
        return QuantizedTensor.from_bytes(f.read())


def write_tensor(path: str | os.PathLike, t: QuantizedTensor) -> None:
    with open(path, "wb") as f:
        f.write(t.to_bytes())
