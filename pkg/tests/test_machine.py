import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcgla.errors import ConfigError, InvalidInput
from qcgla.kernels import KernelTag
from qcgla.machine import (
    ASIC_FREQ_HZ,
    CYCLE_PHASES,
    FPGA_FREQ_HZ,
    PHASES,
    KernelCall,
    MachineConfig,
    PhaseBreakdown,
    exec_cycles,
    phase_times,
    read_trace,
    simulate_trace,
    sweep_lanes,
    write_trace,
)


def test_exec_cycles_frozen():
    # fill = stage count, then one 8-element word per cycle
    assert exec_cycles(KernelCall("q8_0", 1, 256)) == 46 + 32
    assert exec_cycles(KernelCall("q3_k", 1, 256)) == 51 + 32
    assert exec_cycles(KernelCall("q8_0", 3, 1024)) == 3 * (46 + 128)
    assert exec_cycles(KernelCall("q8_0", 0, 1024)) == 0


def test_exec_cycles_tiles_refill():
    call = KernelCall("q8_0", 1, 262144)
    # weights + activations are 2 x 278528 bytes, so two 512 KiB LMM tiles
    assert call.row_weight_bytes + call.activation_bytes == 557056
    assert exec_cycles(call) == 2 * 46 + 262144 // 8


def test_byte_counts():
    c = KernelCall("q8_0", 2, 64)
    assert (c.bytes_in, c.bytes_out) == (2 * 68 + 68, 8)
    c = KernelCall("q3_k", 1, 256)
    assert c.weight_dtype.name == "Q3_K" and c.activation_dtype.name == "Q8_K"
    assert c.bytes_in == 110 + 260
    assert KernelCall("q3_k", 0, 256).bytes_in == 0


def test_phase_times_at_fpga_clock():
    cfg = MachineConfig(freq_hz=FPGA_FREQ_HZ)
    p = phase_times(KernelCall("q8_0", 1, 256), cfg)
    assert p.exec_s == 78 / 145e6
    assert p.conf_s == 0.0
    assert phase_times(KernelCall("q8_0", 1, 256, reconf=True), cfg).conf_s == 1024 / 145e6


@given(st.sampled_from(["q8_0", "q3_k"]), st.integers(0, 64), st.integers(1, 16), st.booleans())
def test_cycle_phases_scale_with_clock(kernel, m, kb, reconf):
    call = KernelCall(kernel, m, 256 * kb, reconf)
    slow = phase_times(call, MachineConfig(freq_hz=FPGA_FREQ_HZ, host_service_seconds_per_call=1e-4))
    fast = phase_times(call, MachineConfig(freq_hz=ASIC_FREQ_HZ, host_service_seconds_per_call=1e-4))
    for ph in CYCLE_PHASES:
        assert math.isclose(getattr(fast, ph), getattr(slow, ph) * 145 / 840, rel_tol=1e-12, abs_tol=0.0)
    assert fast.cpu_s == slow.cpu_s


def test_kernel_call_validation():
    with pytest.raises(InvalidInput):
        KernelCall("q3_k", 1, 32)
    with pytest.raises(InvalidInput):
        KernelCall("q8_0", -1, 32)
    with pytest.raises(ConfigError):
        KernelCall("q4_0", 1, 32)
    assert KernelCall("Q8_0", 1, 32).kernel is KernelTag.Q8_0


def test_phase_breakdown():
    a = PhaseBreakdown(cpu_s=1.0, exec_s=3.0)
    assert a.total == 4.0 and a.host_pre_s == 1.0
    assert (a + a).as_dict()["exec_s"] == 6.0
    assert a.shares()["exec_s"] == 0.75
    assert all(v == 0 for v in PhaseBreakdown().shares().values())
    with pytest.raises(InvalidInput):
        PhaseBreakdown(load_s=-1.0)
    assert tuple(a.as_dict()) == PHASES


# ---------------------------------------------------------------------------
# config and trace files
# ---------------------------------------------------------------------------


def test_config_text_roundtrip(tmp_path):
    cfg = MachineConfig(lanes=3, freq_hz=145e6, host_service_seconds_per_call=2e-5)
    p = tmp_path / "m.cfg"
    p.write_text(cfg.to_text())
    assert MachineConfig.from_file(p) == cfg


@pytest.mark.parametrize("text", ["lanes", "bogus=1", "lanes=abc", "lanes=9", "freq_hz=0", "conf_cycles=-1"])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        MachineConfig.from_text(text)


def test_config_comments_and_replace():
    cfg = MachineConfig.from_text("# machine\nlanes = 2  # two lanes\n\nhost_cores=4\n")
    assert (cfg.lanes, cfg.host_cores) == (2, 4)
    assert cfg.replace(lanes=None, freq_hz=1e9) == MachineConfig(lanes=2, host_cores=4, freq_hz=1e9)


def test_trace_roundtrip(tmp_path):
    calls = [KernelCall("q8_0", 4, 64, True), KernelCall("q3_k", 2, 512)]
    p = tmp_path / "t.jsonl"
    write_trace(p, calls)
    assert read_trace(p) == calls
    assert p.read_text().splitlines()[0] == '{"kernel": "q8_0", "m": 4, "k": 64, "reconf": true}'


@pytest.mark.parametrize("bad", ['{"kernel":"q8_0","m":1}', '{"kernel":"q8_0","m":1,"k":"32"}',
                                 "not json", '{"kernel":"q8_0","m":1,"k":32,"extra":1}',
                                 '{"kernel":"q8_0","m":1,"k":32,"reconf":1}', '{"kernel":"zz","m":1,"k":32}'])
def test_trace_errors_carry_line_numbers(tmp_path, bad):
    p = tmp_path / "t.jsonl"
    p.write_text('{"kernel":"q8_0","m":1,"k":32}\n\n' + bad + "\n")
    with pytest.raises(InvalidInput, match=r"t\.jsonl:3:"):
        read_trace(p)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def test_empty_trace():
    r = simulate_trace([])
    assert r.makespan_s == 0.0 and r.calls == [] and r.aggregate.total == 0.0


def test_single_lane_is_serial():
    calls = [KernelCall("q8_0", 8, 512, i == 0) for i in range(5)]
    cfg = MachineConfig(host_service_seconds_per_call=1e-6)
    r = simulate_trace(calls, cfg)
    assert math.isclose(r.makespan_s, sum(phase_times(c, cfg).total for c in calls), rel_tol=1e-12)
    ends = [c.end_s for c in r.calls]
    assert ends == sorted(ends)


def test_breakdowns_add_up():
    calls = [KernelCall("q3_k", 16, 1024, i % 3 == 0) for i in range(10)]
    r = simulate_trace(calls, MachineConfig(lanes=3))
    assert [c.lane for c in r.calls] == [i % 3 for i in range(10)]
    assert math.isclose(r.aggregate.total, sum(c.phases.total for c in r.calls), rel_tol=1e-12)
    assert len(r.per_lane) == 3


def test_simulation_is_deterministic():
    calls = [KernelCall("q8_0", 1 + i % 7, 256, i % 4 == 0) for i in range(50)]
    cfg = MachineConfig(lanes=4, host_cores=2, host_service_seconds_per_call=3e-6)
    a, b = simulate_trace(calls, cfg), simulate_trace(calls, cfg)
    assert [(c.start_s, c.end_s) for c in a.calls] == [(c.start_s, c.end_s) for c in b.calls]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 64), st.integers(1, 4), st.floats(0, 1e-4))
def test_more_lanes_cost_at_most_one_host_service(n, m, cores, service):
    calls = [KernelCall("q8_0", m, 256) for _ in range(n)]
    cfg = MachineConfig(host_cores=cores, host_service_seconds_per_call=service)
    p = phase_times(calls[0], cfg)
    slack = p.host_pre_s + p.drain_s
    spans = [simulate_trace(calls, cfg.replace(lanes=k)).makespan_s for k in range(1, 9)]
    assert all(b <= a + slack + 1e-15 for a, b in zip(spans, spans[1:]))
    assert all(s <= spans[0] * (1 + 1e-12) for s in spans)


def test_fifo_host_queue_anomaly_is_pinned():
    # a third lane lets a pre-phase take the host ahead of a DRAIN, finishing a hair later than two lanes
    calls = [KernelCall("q8_0", 1, 256) for _ in range(4)]
    cfg = MachineConfig(host_cores=2)
    two = simulate_trace(calls, cfg.replace(lanes=2)).makespan_s
    three = simulate_trace(calls, cfg.replace(lanes=3)).makespan_s
    assert 0 < three - two <= phase_times(calls[0], cfg).drain_s * 1.0000001


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["q8_0", "q3_k"]), st.integers(0, 32), st.booleans()), max_size=20),
       st.integers(1, 8))
def test_makespan_bounds(spec, lanes):
    calls = [KernelCall(k, m, 256, r) for k, m, r in spec]
    cfg = MachineConfig(lanes=lanes, host_cores=2)
    r = simulate_trace(calls, cfg)
    totals = [phase_times(c, cfg).total for c in calls]
    assert r.makespan_s <= sum(totals) * (1 + 1e-12)
    assert r.makespan_s >= max(totals, default=0.0) * (1 - 1e-12)


def test_sweep_host_bound(host_bound):
    trace, cfg = host_bound
    rows, knee = sweep_lanes(trace, cfg)
    assert rows[1].speedup >= 1.8
    assert knee == 3
    assert [r.lanes for r in rows] == list(range(1, 9))


def test_sweep_exec_bound(exec_bound):
    trace, cfg = exec_bound
    rows, knee = sweep_lanes(trace, cfg)
    assert rows[-1].speedup >= 6.0
    assert knee is None


def test_sweep_single_lane_count():
    rows, knee = sweep_lanes([KernelCall("q8_0", 1, 256)], lane_counts=[1])
    assert len(rows) == 1 and knee is None and rows[0].speedup == 1.0
