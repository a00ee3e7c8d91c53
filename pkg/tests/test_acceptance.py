"""Acceptance criteria AC1..AC10, one PASS/FAIL line each."""

import math
import time

import numpy as np
import pytest

from qcgla import isa, verify
from qcgla.errors import Overflow24
from qcgla.kernels import EXPECTED_PE_COUNT, KernelTag, default_mapping, validate_mapping
from qcgla.machine import ASIC_FREQ_HZ, FPGA_FREQ_HZ, KernelCall, MachineConfig, phase_times, sweep_lanes
from qcgla.perfmodel import compare_report, e2e_compose, paper_calibration, paper_scenario
from qcgla.quantcodec import DType, SuperblockQ3K, pack_q3_k, quantize_tensor, read_tensor, unpack_q3_k, write_tensor

SEED = 20240601


def test_ac1_bit_exact_kernels(acceptance):
    rng = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    r8 = verify.bitexact_q8_0(rng, 10_000, k_max=8192)
    r3 = verify.bitexact_q3_k(rng, 10_000, k_max=8192)
    elapsed = time.perf_counter() - t0
    ok = r8.passed and r3.passed and r8.count >= 10_000 and r3.count >= 10_000 and elapsed < 60
    acceptance("AC1", ok, f"q8_0 {r8.count - r8.failures}/{r8.count}, q3_k {r3.count - r3.failures}/{r3.count} "
                          f"bit-exact in {elapsed:.1f}s (limit 60s)")
    assert ok, (r8.counterexample, r3.counterexample, elapsed)


def test_ac2_repack_bound(acceptance):
    res = verify.repack_bound(np.random.default_rng(SEED), 1000)
    ok = res.passed and res.info["max_scale_error"] <= 1
    acceptance("AC2", ok, f"all 64 scale codes within {res.info['max_scale_error']} step; "
                          f"{res.count - 64} code positions preserved")
    assert ok, res.counterexample


def test_ac3_overflow_safety(acceptance):
    res = verify.overflow_stress(np.random.default_rng(SEED), 500)
    with pytest.raises(Overflow24):
        isa.op_ad24(isa.pack_int24(8388607, 0), isa.pack_int24(1, 0))
    acceptance("AC3", res.passed, f"{res.count} extreme-operand cases without Overflow24; 8388607+1 traps")
    assert res.passed, res.counterexample


def test_ac4_repack_accuracy(acceptance):
    res = verify.repack_accuracy(np.random.default_rng(SEED), 1000, k=4096)
    med = res.info["median_rel_error"]
    ok = med <= 0.02
    acceptance("AC4", ok, f"median relative error {med:.4%} over {res.count} Gaussian trials (limit 2%)")
    assert ok, f"median relative error {med:.4%} exceeds 2%"


def test_ac5_frequency_projection(acceptance):
    call = KernelCall("q3_k", 4096, 4096)
    slow = phase_times(call, MachineConfig(freq_hz=FPGA_FREQ_HZ)).exec_s
    fast = phase_times(call, MachineConfig(freq_hz=ASIC_FREQ_HZ)).exec_s
    ratio = slow / fast
    ok = abs(ratio - 840 / 145) <= 1e-9 and round(ratio, 1) == 5.8
    acceptance("AC5", ok, f"exec ratio {ratio:.10f} vs 840/145 = {840 / 145:.10f}")
    assert ok


def test_ac6_pdp(acceptance):
    rows = compare_report(paper_scenario("q3_k"))
    by = {r.device: r.pdp_j for r in rows}
    order = [r.device for r in rows]
    ranked = ["ARM-Cortex-A72", "IMAX3-28nm", "GTX-1080Ti", "Xeon-w5-2465X"]
    ok = (
        math.isclose(by["GTX-1080Ti"], 4050.0, rel_tol=0, abs_tol=1e-9)
        and math.isclose(by["Xeon-w5-2465X"], 11860.0, rel_tol=0, abs_tol=1e-9)
        and [d for d in order if d in ranked] == ranked
    )
    acceptance("AC6", ok, f"GPU {by['GTX-1080Ti']:.1f} J, Xeon {by['Xeon-w5-2465X']:.1f} J, "
                          f"IMAX3-28nm {by['IMAX3-28nm']:.1f} J; order {' < '.join(d for d in order if d in ranked)}")
    assert ok


def test_ac7_e2e_composition(acceptance):
    q3, q8 = paper_calibration("q3_k"), paper_calibration("q8_0")
    l3, l8 = e2e_compose(q3.inputs()), e2e_compose(q8.inputs())
    intermediates = [q3.accel_slow_s, q3.accel_fast_s, q3.overhead_s, q8.accel_slow_s, q8.accel_fast_s, q8.overhead_s]
    ok = (
        abs(l3 - 754.5) / 754.5 <= 0.01
        and abs(l8 - 558.0) / 558.0 <= 0.02
        and all(v >= 0 for v in intermediates)
        and math.isclose(e2e_compose(q8.inputs(fast=False)), 654.7, rel_tol=1e-12)
    )
    acceptance("AC7", ok, f"Q3_K {l3:.2f}s (754.5, overhead {q3.overhead_s:.2f}s, accel {q3.accel_fast_s:.2f}s); "
                          f"Q8_0 {l8:.2f}s (558.0, overhead {q8.overhead_s:.2f}s, accel {q8.accel_fast_s:.2f}s)")
    assert ok


def test_ac8_lane_scaling(acceptance, host_bound, exec_bound):
    hb_rows, hb_knee = sweep_lanes(*host_bound)
    eb_rows, _ = sweep_lanes(*exec_bound)
    s2, s8 = hb_rows[1].speedup, eb_rows[-1].speedup
    ok = s2 >= 1.8 and hb_knee == 3 and s8 >= 6.0
    acceptance("AC8", ok, f"host-bound 2-lane speedup {s2:.2f}x, knee at {hb_knee}; exec-bound 8-lane speedup {s8:.2f}x")
    assert ok


def test_ac9_format_roundtrips(acceptance, tmp_path):
    rng = np.random.default_rng(SEED)
    b = SuperblockQ3K(
        rng.uniform(0, 4, 10_000).astype(np.float16),
        rng.integers(0, 64, (10_000, 16)),
        rng.integers(0, 8, (10_000, 256)),
    )
    raw = pack_q3_k(b)
    blocks_ok = pack_q3_k(unpack_q3_k(raw)) == raw and unpack_q3_k(raw) == b
    files_ok = True
    for dtype in DType:
        t = quantize_tensor(rng.normal(size=(4, 1024)).astype(np.float32), dtype)
        p1, p2 = tmp_path / f"{dtype.name}.a", tmp_path / f"{dtype.name}.b"
        write_tensor(p1, t)
        write_tensor(p2, read_tensor(p1))
        files_ok &= p1.read_bytes() == p2.read_bytes()
    ok = blocks_ok and files_ok
    acceptance("AC9", ok, f"10000 superblocks pack->unpack->pack identical: {blocks_ok}; "
                          f"QCGT write->read->write identical for {len(DType)} dtypes: {files_ok}")
    assert ok


def test_ac10_mapping_totals(acceptance):
    counts = {}
    for kernel in KernelTag:
        m = validate_mapping(default_mapping(kernel))
        counts[kernel.value] = m.pe_count
    ok = counts == {"Q8_0": 46, "Q3_K": 51} == {k.value: v for k, v in EXPECTED_PE_COUNT.items()}
    acceptance("AC10", ok, f"PE totals {counts}, acyclic and validated")
    assert ok
