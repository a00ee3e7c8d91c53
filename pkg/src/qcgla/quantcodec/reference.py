"""Reference dot products used as oracles for the pipelined kernels.

Inner integer sums are exact (int64).  Per block the term is
``f32(f32(scale_a) * f32(scale_b)) * f32(isum)`` and terms are accumulated
one block at a time in binary32, so pipelined kernels can be compared
bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from qcgla.errors import ShapeError
from qcgla.quantcodec.blocks import (
    QK_K,
    SUB_K,
    BlockQ8_0,
    BlockQ8K,
    RepackedQ3K,
    SuperblockQ3K,
    unrepack_codes,
)


def _sequential_f32(scale_a: np.ndarray, scale_b: np.ndarray, isum: np.ndarray) -> np.float32:
    acc = np.float32(0.0)
    for sa, sb, s in zip(scale_a.astype(np.float32), scale_b.astype(np.float32), isum):
        scale = np.float32(sa * sb)
        acc = np.float32(acc + np.float32(scale * np.float32(s)))
    return acc


def ref_dot_q8_0(a: BlockQ8_0, b: BlockQ8_0) -> np.float32:
    if len(a) != len(b):
        raise ShapeError(f"block counts differ: {len(a)} vs {len(b)}")
    isum = (a.q.astype(np.int64) * b.q.astype(np.int64)).sum(axis=1)
    return _sequential_f32(a.d, b.d, isum)


def _q3_isum(scale: np.ndarray, quants: np.ndarray, act: BlockQ8K) -> np.ndarray:
    n = quants.shape[0]
    q = quants.astype(np.int64).reshape(n, QK_K // SUB_K, SUB_K) - 4
    x = act.q.astype(np.int64).reshape(n, QK_K // SUB_K, SUB_K)
    return (scale.astype(np.int64) * (q * x).sum(axis=2)).sum(axis=1)


def ref_dot_q3_k(w: SuperblockQ3K, a: BlockQ8K) -> np.float32:
    if len(w) != len(a):
        raise ShapeError(f"superblock counts differ: {len(w)} vs {len(a)}")
    isum = _q3_isum(w.scales.astype(np.int64) - 32, w.quants, a)
    return _sequential_f32(w.d, a.d, isum)


def ref_dot_q3_k_repacked(w: RepackedQ3K, a: BlockQ8K) -> np.float32:
    if len(w) != len(a):
        raise ShapeError(f"superblock counts differ: {len(w)} vs {len(a)}")
    s5, quants = unrepack_codes(w)
    isum = _q3_isum(2 * s5.astype(np.int64), quants, a)
    return _sequential_f32(w.d, a.d, isum)
