"""``qcgla`` command-line entry point.

Exit codes: 0 success, 1 check failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from qcgla import report, verify
from qcgla.errors import QcglaError
from qcgla.kernels import MAX_LANES, KernelTag, load_mapping, q3_k_dot_many, q8_0_dot_many
from qcgla.machine import (
    PHASES,
    KernelCall,
    MachineConfig,
    PhaseBreakdown,
    exec_cycles,
    read_trace,
    simulate_trace,
    sweep_lanes,
    write_trace,
)
from qcgla.perfmodel import REPORT_COLUMNS, compare_report, load_scenario, paper_scenario
from qcgla.quantcodec import DType, QuantizedTensor, quantize_tensor, read_tensor, write_tensor
from qcgla.quantcodec.tensorfile import MAGIC

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _write_out(args, text: str) -> None:
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as f:
            f.write(text)


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _config(args) -> MachineConfig:
    path = args.config or os.environ.get("QCGLA_CONFIG")
    cfg = MachineConfig.from_file(path) if path else MachineConfig()
    return cfg.replace(freq_hz=args.freq, lanes=args.lanes, host_cores=args.host_cores)


def _mappings(args) -> dict | None:
    out = {}
    for kernel, path in ((KernelTag.Q8_0, getattr(args, "q8_0_map", None)), (KernelTag.Q3_K, getattr(args, "q3_k_map", None))):
        if path:
            out[kernel] = load_mapping(path, kernel)
    return out or None


def _load_values(path: str, cols: int | None) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] == MAGIC:
        t = QuantizedTensor.from_bytes(data)
        if t.dtype != DType.F32:
            raise UsageError(f"{path}: expected an F32 tensor, got {t.dtype.name}")
        return t.dequantize()
    if cols is None:
        raise UsageError("raw float32 input needs --cols")
    if cols <= 0:
        raise UsageError("--cols must be positive")
    if len(data) % 4:
        raise UsageError(f"{path}: size {len(data)} is not a whole number of float32 values")
    x = np.frombuffer(data, dtype="<f4")
    if x.size % cols:
        raise UsageError(f"{path}: {x.size} values do not fill rows of {cols}")
    return x.reshape(-1, cols)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_quantize(args) -> int:
    x = _load_values(args.input, args.cols)
    dtype = DType.parse(args.dtype)
    t = quantize_tensor(x, dtype)
    write_tensor(args.output, t)
    raw = x.size * 4
    ratio = raw / t.nbytes if t.nbytes else 0.0
    print(f"blocks={t.block_count} bytes={t.nbytes} ratio={raw}/{t.nbytes}={ratio:.6f}")
    return EXIT_OK


def cmd_dequantize(args) -> int:
    t = read_tensor(args.input)
    x = t.dequantize().astype("<f4")
    if args.raw:
        with open(args.output, "wb") as f:
            f.write(x.tobytes())
    else:
        write_tensor(args.output, QuantizedTensor(DType.F32, t.rows, t.cols, x.reshape(-1)))
    print(f"rows={t.rows} cols={t.cols} dtype={t.dtype.name}")
    return EXIT_OK


def cmd_check(args) -> int:
    if args.trials < 0:
        raise UsageError("--trials must be non-negative")
    if args.k_max < 256 or args.k_max % 256:
        raise UsageError("--k-max must be a positive multiple of 256")
    rng = np.random.default_rng(args.seed)
    if args.trials == 0:
        _note("warning: trials=0, randomized suites pass vacuously")
    mappings = _mappings(args) or {}
    suites = [
        verify.bitexact_q8_0(rng, args.trials, args.k_max, mappings.get(KernelTag.Q8_0), fault=args.inject_fault),
        verify.bitexact_q3_k(rng, args.trials, args.k_max, mappings.get(KernelTag.Q3_K), fault=args.inject_fault),
        verify.repack_bound(rng, args.trials),
        verify.overflow_stress(rng, args.trials, args.k_max),
    ]
    failed = None
    for s in suites:
        print(f"{s.name}: {'PASS' if s.passed else 'FAIL'} cases={s.count} failures={s.failures}")
        if not s.passed and failed is None:
            failed = s
    acc = verify.repack_accuracy(rng, args.accuracy_trials, args.accuracy_k)
    print(f"repack_accuracy: median_rel_error={acc.info['median_rel_error']:.6f} trials={acc.count} (reported, not gated)")
    if failed is not None:
        print(f"counterexample ({failed.name}, seed={args.seed}): {failed.counterexample}")
        return EXIT_FAIL
    return EXIT_OK


BENCH_COLUMNS = ("kernel", "k", "pairs", "wall_s", "pairs_per_s", "exec_cycles_per_row", "exec_s_per_row")


def cmd_bench(args) -> int:
    if args.pairs <= 0 or args.k <= 0 or args.k % 256:
        raise UsageError("--pairs must be positive and --k a positive multiple of 256")
    rng = np.random.default_rng(args.seed)
    cfg = _config(args)
    n8, n3 = args.k // 32, args.k // 256
    rows = []
    for kernel in (KernelTag.Q8_0, KernelTag.Q3_K):
        if kernel is KernelTag.Q8_0:
            pairs = [(verify.random_q8_0(rng, n8), verify.random_q8_0(rng, n8)) for _ in range(args.pairs)]
            fn = q8_0_dot_many
        else:
            pairs = [(verify.random_q3_k(rng, n3), verify.random_q8_k(rng, n3)) for _ in range(args.pairs)]
            fn = q3_k_dot_many
        t0 = time.perf_counter()
        fn(pairs)
        wall = time.perf_counter() - t0
        cyc = exec_cycles(KernelCall(kernel, 1, args.k), config=cfg)
        rows.append({
            "kernel": kernel.value.lower(), "k": args.k, "pairs": args.pairs, "wall_s": wall,
            "pairs_per_s": args.pairs / wall if wall else 0.0,
            "exec_cycles_per_row": cyc, "exec_s_per_row": cyc / cfg.freq_hz,
        })
    _write_out(args, report.emit(BENCH_COLUMNS, rows, args.format))
    return EXIT_OK


SIM_COLUMNS = ("scope", "index", "lane", "kernel", "m", "k", "reconf", "start_s", "end_s") + PHASES + ("total_s",)
SHARE_COLUMNS = ("kernel", "calls") + tuple(p.replace("_s", "_pct") for p in PHASES)


def _phase_cols(b: PhaseBreakdown) -> dict:
    d = b.as_dict()
    d["total_s"] = b.total
    return d


def simulation_rows(result) -> list[dict]:
    rows = []
    for r in result.calls:
        rows.append({"scope": "call", "index": r.index, "lane": r.lane, "kernel": r.call.kernel.value.lower(),
                     "m": r.call.m, "k": r.call.k, "reconf": r.call.reconf, "start_s": r.start_s,
                     "end_s": r.end_s, **_phase_cols(r.phases)})
    if not result.calls:
        return rows
    for lane, b in enumerate(result.per_lane):
        rows.append({"scope": "lane", "lane": lane, **_phase_cols(b)})
    rows.append({"scope": "aggregate", "end_s": result.makespan_s, **_phase_cols(result.aggregate)})
    return rows


def share_rows(result) -> list[dict]:
    """Per-kernel percentage of time in each phase."""
    totals: dict[str, PhaseBreakdown] = {}
    counts: dict[str, int] = {}
    for r in result.calls:
        key = r.call.kernel.value.lower()
        totals[key] = totals.get(key, PhaseBreakdown()) + r.phases
        counts[key] = counts.get(key, 0) + 1
    rows = []
    for key in sorted(totals):
        shares = totals[key].shares()
        rows.append({"kernel": key, "calls": counts[key],
                     **{p.replace("_s", "_pct"): 100.0 * shares[p] for p in PHASES}})
    return rows


def cmd_simulate(args) -> int:
    trace = read_trace(args.trace)
    result = simulate_trace(trace, _config(args), _mappings(args))
    _write_out(args, report.emit(SIM_COLUMNS, simulation_rows(result), args.format))
    shares = share_rows(result)
    if args.summary:
        with open(args.summary, "w") as f:
            f.write(report.emit(SHARE_COLUMNS, shares, args.format))
    for row in shares:
        parts = " ".join(f"{c[:-4]}={row[c]:.1f}%" for c in SHARE_COLUMNS[2:])
        _note(f"{row['kernel']} ({row['calls']} calls): {parts}")
    return EXIT_OK


SWEEP_COLUMNS = ("lanes", "makespan_s", "speedup", "marginal_speedup", "knee")


def cmd_sweep_lanes(args) -> int:
    trace = read_trace(args.trace)
    lo, hi = args.min_lanes, args.max_lanes
    if not 1 <= lo <= hi <= MAX_LANES:
        raise UsageError(f"lane range must satisfy 1 <= min <= max <= {MAX_LANES}")
    rows, knee = sweep_lanes(trace, _config(args).replace(lanes=1), range(lo, hi + 1), _mappings(args))
    out = [{"lanes": r.lanes, "makespan_s": r.makespan_s, "speedup": r.speedup,
            "marginal_speedup": r.marginal_speedup, "knee": r.lanes == knee} for r in rows]
    _write_out(args, report.emit(SWEEP_COLUMNS, out, args.format))
    _note(f"knee: {knee if knee is not None else 'none'}")
    if args.svg:
        svg = report.bar_chart_svg([r.lanes for r in rows], [r.speedup for r in rows],
                                   title="Speedup vs active lanes", y_label="speedup")
        with open(args.svg, "w") as f:
            f.write(svg)
    return EXIT_OK


def cmd_compare_pdp(args) -> int:
    if args.scenario:
        scenario = load_scenario(args.scenario)
    else:
        scenario = paper_scenario(args.preset.split("-", 1)[1])
    rows = compare_report(scenario)
    _write_out(args, report.emit(REPORT_COLUMNS, [r.as_dict() for r in rows], args.format))
    if scenario.calibration is not None:
        for key, val in scenario.calibration.as_dict().items():
            _note(f"calibration {key}={val!r}")
    return EXIT_OK


_UNET_M = (320, 640, 1280)
_UNET_K = (768, 1280, 2560, 5120)


def gen_trace(preset: str, count: int, seed: int = 0, kernel: str = "q3_k", m: int = 64, k: int = 2048) -> list[KernelCall]:
    if count < 0:
        raise UsageError("--count must be non-negative")
    if preset == "uniform":
        if m <= 0 or k <= 0:
            raise UsageError("--m and --k must be positive")
        return [KernelCall(KernelTag.parse(kernel), m, k, reconf=(i == 0)) for i in range(count)]
    rng = np.random.default_rng(seed)
    calls = []
    prev = None
    for _ in range(count):
        tag = KernelTag.Q3_K if rng.random() < 0.75 else KernelTag.Q8_0
        call = KernelCall(tag, int(rng.choice(_UNET_M)), int(rng.choice(_UNET_K)), reconf=tag is not prev)
        calls.append(call)
        prev = tag
    return calls


def cmd_gen_trace(args) -> int:
    calls = gen_trace(args.preset, args.count, args.seed, args.kernel, args.m, args.k)
    if args.out in (None, "-"):
        sys.stdout.write("".join(c.to_json() + "\n" for c in calls))
    else:
        write_trace(args.out, calls)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    g.add_argument("--freq", type=float, help="accelerator clock in Hz")
    g.add_argument("--lanes", type=int, help=f"active lanes, 1..{MAX_LANES}")
    g.add_argument("--host-cores", type=int, help="host cores serving lanes")
    g.add_argument("--config", help="machine config file (falls back to $QCGLA_CONFIG)")
    g.add_argument("--out", help="output path (default stdout)")
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    return p


def _map_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--q8_0-map", dest="q8_0_map", help="override the Q8_0 mapping file")
    p.add_argument("--q3_k-map", dest="q3_k_map", help="override the Q3_K mapping file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcgla", description="Quantized dot-product kernels on a linear-array accelerator model.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = [_global_flags()]

    p = sub.add_parser("quantize", parents=common, help="quantize an F32 tensor file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--dtype", default="q8_0", help="q8_0, q3_k, q3_k_repacked or q8_k")
    p.add_argument("--cols", type=int, help="row length for raw float32 input")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("dequantize", parents=common, help="expand a QCGT tensor to float32")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--raw", action="store_true", help="write raw little-endian float32 instead of QCGT")
    p.set_defaults(func=cmd_dequantize)

    p = sub.add_parser("check", parents=common, help="run the oracle-equivalence suites")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--k-max", type=int, default=8192)
    p.add_argument("--accuracy-trials", type=int, default=100)
    p.add_argument("--accuracy-k", type=int, default=4096)
    p.add_argument("--inject-fault", action="store_true", help="flip one result bit to exercise the failure path")
    _map_flags(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bench", parents=common, help="time the pipeline kernels")
    p.add_argument("--pairs", type=int, default=200)
    p.add_argument("--k", type=int, default=4096)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("simulate", parents=common, help="phase breakdown of a trace")
    p.add_argument("trace")
    p.add_argument("--summary", help="write the per-kernel phase shares here")
    _map_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-lanes", parents=common, help="makespan for 1..8 lanes")
    p.add_argument("trace")
    p.add_argument("--min-lanes", type=int, default=1)
    p.add_argument("--max-lanes", type=int, default=MAX_LANES)
    p.add_argument("--svg", help="write a speedup bar chart")
    _map_flags(p)
    p.set_defaults(func=cmd_sweep_lanes)

    p = sub.add_parser("compare-pdp", parents=common, help="rank devices by power-delay product")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario", help="INI scenario file")
    src.add_argument("--preset", choices=("paper-q3_k", "paper-q8_0"), default="paper-q3_k")
    p.set_defaults(func=cmd_compare_pdp)

    p = sub.add_parser("gen-trace", parents=common, help="write a synthetic JSONL trace")
    p.add_argument("--preset", choices=("uniform", "unet-like"), default="uniform")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--kernel", default="q3_k")
    p.add_argument("--m", type=int, default=64)
    p.add_argument("--k", type=int, default=2048)
    p.set_defaults(func=cmd_gen_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    if args.freq is not None and args.freq <= 0:
        _note("qcgla: error: --freq must be positive")
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, QcglaError, OSError) as e:
        _note(f"qcgla {args.command}: error: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["build_parser", "gen_trace", "main"]
