"""Randomised oracle-equivalence suites shared by ``qcgla check`` and the test-suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qcgla import isa
from qcgla.errors import Overflow24
from qcgla.kernels import q3_k_dot_many, q8_0_dot_many
from qcgla.quantcodec import (
    QK8_0,
    QK_K,
    BlockQ8_0,
    BlockQ8K,
    SuperblockQ3K,
    quantize_q3_k,
    quantize_q8_0,
    quantize_q8_k,
    ref_dot_q3_k,
    ref_dot_q3_k_repacked,
    ref_dot_q8_0,
    repack_q3_k,
    repack_scale,
    unrepack_codes,
)


@dataclass
class SuiteResult:
    name: str
    count: int = 0
    failures: int = 0
    counterexample: dict | None = None
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.failures == 0


def _bits(x) -> int:
    return int(np.float32(x).view(np.uint32))


def random_q8_0(rng: np.random.Generator, n: int) -> BlockQ8_0:
    """Random blocks: half quantized Gaussians, half uniform codes with random scales."""
    if rng.random() < 0.5:
        return quantize_q8_0(rng.normal(scale=rng.uniform(0.01, 10.0), size=n * QK8_0))
    q = rng.integers(-127, 128, size=(n, QK8_0), dtype=np.int8)
    d = rng.uniform(0.0, 2.0, size=n).astype(np.float16)
    q[d == 0] = 0
    return BlockQ8_0(d, q)


def random_q3_k(rng: np.random.Generator, n: int) -> SuperblockQ3K:
    if rng.random() < 0.5:
        return quantize_q3_k(rng.normal(scale=rng.uniform(0.01, 10.0), size=n * QK_K))
    return SuperblockQ3K(
        rng.uniform(0.0, 2.0, size=n).astype(np.float16),
        rng.integers(0, 64, size=(n, 16), dtype=np.uint8),
        rng.integers(0, 8, size=(n, QK_K), dtype=np.uint8),
    )


def random_q8_k(rng: np.random.Generator, n: int) -> BlockQ8K:
    if rng.random() < 0.5:
        return quantize_q8_k(rng.normal(scale=rng.uniform(0.01, 10.0), size=n * QK_K))
    return BlockQ8K(rng.uniform(0.0, 2.0, size=n).astype(np.float32), rng.integers(-127, 128, size=(n, QK_K), dtype=np.int8))


def _sizes(rng, trials: int, k_max: int, block: int) -> list[int]:
    return [int(n) for n in rng.integers(1, k_max // block + 1, size=trials)]


def bitexact_q8_0(rng, trials: int, k_max: int = 8192, mapping=None, fault: bool = False, batch: int = 500) -> SuiteResult:
    res = SuiteResult("bitexact_q8_0")
    done = 0
    while done < trials:
        cases = [(random_q8_0(rng, n), random_q8_0(rng, n)) for n in _sizes(rng, min(batch, trials - done), k_max, QK8_0)]
        got = q8_0_dot_many(cases, mapping)
        for i, (a, b) in enumerate(cases):
            g = _bits(got[i]) ^ (1 if fault else 0)
            want = _bits(ref_dot_q8_0(a, b))
            res.count += 1
            if g != want:
                res.failures += 1
                if res.counterexample is None:
                    res.counterexample = {"trial": done + i, "k": len(a) * QK8_0,
                                          "kernel_bits": hex(g), "reference_bits": hex(want)}
        done += len(cases)
    return res


def bitexact_q3_k(rng, trials: int, k_max: int = 8192, mapping=None, fault: bool = False, batch: int = 500) -> SuiteResult:
    res = SuiteResult("bitexact_q3_k")
    done = 0
    while done < trials:
        cases = [(repack_q3_k(random_q3_k(rng, n)), random_q8_k(rng, n))
                 for n in _sizes(rng, min(batch, trials - done), k_max, QK_K)]
        got = q3_k_dot_many(cases, mapping)
        for i, (w, a) in enumerate(cases):
            g = _bits(got[i]) ^ (1 if fault else 0)
            want = _bits(ref_dot_q3_k_repacked(w, a))
            res.count += 1
            if g != want:
                res.failures += 1
                if res.counterexample is None:
                    res.counterexample = {"trial": done + i, "k": len(w) * QK_K,
                                          "kernel_bits": hex(g), "reference_bits": hex(want)}
        done += len(cases)
    return res


def repack_bound(rng, trials: int = 100) -> SuiteResult:
    """Exhaustive 6-bit scale bound plus code preservation for every code at every position."""
    res = SuiteResult("repack_bound")
    codes = np.arange(64)
    err = np.abs(2 * repack_scale(codes).astype(np.int64) - (codes - 32))
    res.count += 64
    res.failures += int((err > 1).sum())
    if res.failures and res.counterexample is None:
        bad = int(codes[err > 1][0])
        res.counterexample = {"scale_code": bad, "s5": int(repack_scale(bad))}
    # every code value at every one of the 256 positions
    quants = np.tile(np.arange(8, dtype=np.uint8)[:, None], (1, QK_K))
    blocks = SuperblockQ3K(np.ones(8, np.float16), rng.integers(0, 64, size=(8, 16), dtype=np.uint8), quants)
    blocks_rand = random_q3_k(rng, max(trials, 1))
    for b in (blocks, blocks_rand):
        _, got = unrepack_codes(repack_q3_k(b))
        bad = np.argwhere(got != b.quants)
        res.count += b.quants.size
        res.failures += len(bad)
        if len(bad) and res.counterexample is None:
            res.counterexample = {"block": int(bad[0][0]), "position": int(bad[0][1])}
    res.info["max_scale_error"] = int(err.max())
    return res


def _extreme_q8_0(rng, n: int) -> BlockQ8_0:
    sign = rng.choice(np.array([-127, 127], dtype=np.int8), size=(n, 1))
    q = np.broadcast_to(sign, (n, QK8_0)).copy()
    return BlockQ8_0(np.ones(n, np.float16), q)


def overflow_stress(rng, trials: int, k_max: int = 8192) -> SuiteResult:
    """Every operand at its range limit, through the public kernel entry points."""
    res = SuiteResult("overflow_stress")
    cases8 = []
    cases3 = []
    for n in _sizes(rng, trials, k_max, QK_K):
        a = _extreme_q8_0(rng, n * 8)
        cases8.append((a, a if rng.random() < 0.5 else _extreme_q8_0(rng, n * 8)))
        # s5 = -16 with codes 0 (value -4) against -127 activations is the largest |product|
        scales = np.full((n, 16), rng.choice([0, 1]), dtype=np.uint8)
        w = SuperblockQ3K(np.ones(n, np.float16), scales, np.zeros((n, QK_K), np.uint8))
        act = BlockQ8K(np.ones(n, np.float32), np.full((n, QK_K), -127, np.int8))
        cases3.append((repack_q3_k(w), act))
    try:
        got8 = q8_0_dot_many(cases8)
        got3 = q3_k_dot_many(cases3)
    except Overflow24 as e:
        res.count = len(cases8) + len(cases3)
        res.failures = 1
        res.counterexample = {"error": str(e)}
        return res
    for (a, b), g in zip(cases8, got8):
        res.count += 1
        if _bits(g) != _bits(ref_dot_q8_0(a, b)):
            res.failures += 1
    for (w, a), g in zip(cases3, got3):
        res.count += 1
        if _bits(g) != _bits(ref_dot_q3_k_repacked(w, a)):
            res.failures += 1
    # the direct boundary must still trip
    try:
        isa.op_ad24(isa.pack_int24(isa.INT24_MAX, 0), isa.pack_int24(1, 0))
        res.failures += 1
        res.counterexample = {"error": "op_ad24 accepted 8388607 + 1"}
    except Overflow24:
        pass
    res.count += 1
    return res


def repack_accuracy(rng, trials: int, k: int = 4096) -> SuiteResult:
    """Median relative error of the repacked Q3_K dot against the exact one on Gaussian data."""
    res = SuiteResult("repack_accuracy")
    rel = []
    for _ in range(trials):
        w = quantize_q3_k(rng.normal(size=k))
        a = quantize_q8_k(rng.normal(size=k))
        exact = float(ref_dot_q3_k(w, a))
        approx = float(ref_dot_q3_k_repacked(repack_q3_k(w), a))
        if exact != 0.0:
            rel.append(abs(approx - exact) / abs(exact))
    res.count = len(rel)
    res.info["median_rel_error"] = float(np.median(rel)) if rel else 0.0
    return res


__all__ = [
    "SuiteResult",
    "bitexact_q3_k",
    "bitexact_q8_0",
    "overflow_stress",
    "random_q3_k",
    "random_q8_0",
    "random_q8_k",
    "repack_accuracy",
    "repack_bound",
]
