"""
Cycle-approximate model of one or more 64-PE linear-array lanes.

Every kernel call is split into the phases the host drives (CPU work,
CONF/REGV/RANGE configuration, LOAD into the local memories, DRAIN back to
main memory) and the EXEC burst the lane runs on its own.  Host phases need
one of ``host_cores`` service slots; EXEC overlaps freely across lanes.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
import math
import os
from dataclasses import dataclass, field, fields

from qcgla.errors import ConfigError, InvalidInput
from qcgla.kernels import MAX_LANES, WORD_ELEMS, KernelMapping, KernelTag, default_mapping
from qcgla.quantcodec import DType

FPGA_FREQ_HZ = 145e6
ASIC_FREQ_HZ = 840e6
# the device table lists 800 MHz for the 28 nm part; timing analysis gives 840 MHz
ASIC_TABLE_FREQ_HZ = 800e6

WEIGHT_DTYPE = {KernelTag.Q8_0: DType.Q8_0, KernelTag.Q3_K: DType.Q3_K}
ACTIVATION_DTYPE = {KernelTag.Q8_0: DType.Q8_0, KernelTag.Q3_K: DType.Q8_K}


@dataclass(frozen=True)
class MachineConfig:
    pes_per_lane: int = 64
    lanes: int = 1
    freq_hz: float = ASIC_FREQ_HZ
    lmm_bytes_per_lane: int = 512 * 1024
    host_cores: int = 2
    load_bw_bytes_per_cycle: float = 8.0
    drain_bw_bytes_per_cycle: float = 8.0
    conf_cycles: int = 64 * 16
    regv_cycles: int = 64 * 4
    range_cycles: int = 64 * 2
    host_service_seconds_per_call: float = 0.0

    def __post_init__(self):
        if not 1 <= self.lanes <= MAX_LANES:
            raise ConfigError(f"lanes must be in [1, {MAX_LANES}], got {self.lanes}")
        positive = ("pes_per_lane", "freq_hz", "lmm_bytes_per_lane", "host_cores",
                    "load_bw_bytes_per_cycle", "drain_bw_bytes_per_cycle")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("conf_cycles", "regv_cycles", "range_cycles", "host_service_seconds_per_call"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    def replace(self, **changes) -> MachineConfig:
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_text(cls, text: str) -> MachineConfig:
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = (p.strip() for p in line.partition("="))
            if not sep:
                raise ConfigError(f"line {lineno}: expected key=value")
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            try:
                values[key] = int(float(val)) if types[key] == "int" else float(val)
            except ValueError:
                raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from None
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> MachineConfig:
        with open(path) as f:
            return cls.from_text(f.read())

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


PHASES = ("cpu_s", "conf_s", "regv_s", "range_s", "load_s", "exec_s", "drain_s")
CYCLE_PHASES = PHASES[1:]
HOST_PRE_PHASES = ("cpu_s", "conf_s", "regv_s", "range_s", "load_s")


@dataclass(frozen=True)
class PhaseBreakdown:
    cpu_s: float = 0.0
    conf_s: float = 0.0
    regv_s: float = 0.0
    range_s: float = 0.0
    load_s: float = 0.0
    exec_s: float = 0.0
    drain_s: float = 0.0

    def __post_init__(self):
        if any(getattr(self, p) < 0 for p in PHASES):
            raise InvalidInput("phase times must be non-negative")

    @property
    def total(self) -> float:
        return sum(getattr(self, p) for p in PHASES)

    @property
    def host_pre_s(self) -> float:
        return sum(getattr(self, p) for p in HOST_PRE_PHASES)

    def __add__(self, other: PhaseBreakdown) -> PhaseBreakdown:
        return PhaseBreakdown(*(getattr(self, p) + getattr(other, p) for p in PHASES))

    def as_dict(self) -> dict[str, float]:
        return {p: getattr(self, p) for p in PHASES}

    def shares(self) -> dict[str, float]:
        """Fraction of total time per phase (all zero for an empty breakdown)."""
        t = self.total
        return {p: (getattr(self, p) / t if t else 0.0) for p in PHASES}


@dataclass(frozen=True)
class KernelCall:
    kernel: KernelTag
    m: int
    k: int
    reconf: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kernel", KernelTag.parse(self.kernel))
        if self.m < 0 or self.k < 0:
            raise InvalidInput("call dimensions must be non-negative")
        for dt in (self.weight_dtype, self.activation_dtype):
            if self.k % dt.block_len:
                raise InvalidInput(f"k={self.k} is not a multiple of the {dt.name} block length {dt.block_len}")

    @property
    def weight_dtype(self) -> DType:
        return WEIGHT_DTYPE[self.kernel]

    @property
    def activation_dtype(self) -> DType:
        return ACTIVATION_DTYPE[self.kernel]

    @property
    def row_weight_bytes(self) -> int:
        dt = self.weight_dtype
        return self.k // dt.block_len * dt.block_bytes

    @property
    def activation_bytes(self) -> int:
        dt = self.activation_dtype
        return self.k // dt.block_len * dt.block_bytes

    @property
    def bytes_in(self) -> int:
        if self.m == 0:
            return 0
        return self.m * self.row_weight_bytes + self.activation_bytes

    @property
    def bytes_out(self) -> int:
        return 4 * self.m

    def to_json(self) -> str:
        return json.dumps({"kernel": self.kernel.value.lower(), "m": self.m, "k": self.k, "reconf": self.reconf})

    @classmethod
    def from_json(cls, line: str) -> KernelCall:
        obj = json.loads(line)
        if not isinstance(obj, dict) or set(obj) - {"kernel", "m", "k", "reconf"}:
            raise InvalidInput("expected an object with kernel, m, k, reconf")
        try:
            m, k = obj["m"], obj["k"]
            kernel = obj["kernel"]
        except KeyError as e:
            raise InvalidInput(f"missing field {e.args[0]!r}") from None
        if not isinstance(m, int) or not isinstance(k, int) or isinstance(m, bool) or isinstance(k, bool):
            raise InvalidInput("m and k must be integers")
        reconf = obj.get("reconf", False)
        if not isinstance(reconf, bool):
            raise InvalidInput("reconf must be a boolean")
        return cls(KernelTag.parse(kernel), m, k, reconf)


def read_trace(path: str | os.PathLike) -> list[KernelCall]:
    calls = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                calls.append(KernelCall.from_json(line))
            except (ValueError, ConfigError) as e:
                raise InvalidInput(f"{path}:{lineno}: {e}") from None
    return calls


def write_trace(path: str | os.PathLike, calls) -> None:
    with open(path, "w") as f:
        for c in calls:
            f.write(c.to_json() + "\n")


def _mapping_for(call: KernelCall, mappings) -> KernelMapping:
    if mappings and call.kernel in mappings:
        return mappings[call.kernel]
    return default_mapping(call.kernel)


def exec_cycles(call: KernelCall, mapping: KernelMapping | None = None, config: MachineConfig | None = None) -> int:
    """Pipeline-fill model: each row pays the fill once per LMM tile, then streams one word per cycle."""
    mapping = mapping or default_mapping(call.kernel)
    config = config or MachineConfig()
    if call.m == 0 or call.k == 0:
        return 0
    fill = len(mapping.stages)
    working_set = call.row_weight_bytes + call.activation_bytes
    tiles = max(1, math.ceil(working_set / config.lmm_bytes_per_lane))
    return call.m * (tiles * fill + math.ceil(call.k / WORD_ELEMS))


def phase_times(call: KernelCall, config: MachineConfig | None = None, mapping: KernelMapping | None = None) -> PhaseBreakdown:
    config = config or MachineConfig()
    f = config.freq_hz
    return PhaseBreakdown(
        cpu_s=config.host_service_seconds_per_call,
        conf_s=config.conf_cycles / f if call.reconf else 0.0,
        regv_s=config.regv_cycles / f,
        range_s=config.range_cycles / f,
        load_s=call.bytes_in / (config.load_bw_bytes_per_cycle * f),
        exec_s=exec_cycles(call, mapping, config) / f,
        drain_s=call.bytes_out / (config.drain_bw_bytes_per_cycle * f),
    )


@dataclass(frozen=True)
class CallRecord:
    index: int
    lane: int
    call: KernelCall
    phases: PhaseBreakdown
    start_s: float
    end_s: float


@dataclass
class SimulationResult:
    config: MachineConfig
    calls: list[CallRecord] = field(default_factory=list)
    per_lane: list[PhaseBreakdown] = field(default_factory=list)
    makespan_s: float = 0.0

    @property
    def aggregate(self) -> PhaseBreakdown:
        total = PhaseBreakdown()
        for b in self.per_lane:
            total = total + b
        return total


def simulate_trace(trace, config: MachineConfig | None = None, mappings=None) -> SimulationResult:
    """Deterministic event simulation of a trace over ``config.lanes`` lanes.

    Calls go to lanes round-robin and run in order on their lane.  Before
    EXEC a call needs a host slot for its CPU/CONF/REGV/RANGE/LOAD phases
    and after EXEC another for DRAIN.  Host requests are served first come
    first served by the earliest free of ``host_cores`` slots, ties broken
    by lane index then slot index.
    """
    config = config or MachineConfig()
    trace = list(trace)
    lanes = config.lanes
    phases = [phase_times(c, config, _mapping_for(c, mappings)) for c in trace]
    queues = [list(range(l, len(trace), lanes)) for l in range(lanes)]
    pos = [0] * lanes
    slots = [0.0] * config.host_cores
    started: dict[int, float] = {}
    records: list[CallRecord] = []
    seq = 0
    heap: list[tuple] = []
    for lane in range(lanes):
        if queues[lane]:
            heapq.heappush(heap, (0.0, lane, seq, queues[lane][0], "pre"))
            seq += 1

    def serve(arrival: float, duration: float) -> tuple[float, float]:
        if duration == 0:
            return arrival, arrival
        slot = min(range(len(slots)), key=lambda s: (max(slots[s], arrival), s))
        start = max(slots[slot], arrival)
        slots[slot] = start + duration
        return start, start + duration

    while heap:
        arrival, lane, _, ci, stage = heapq.heappop(heap)
        p = phases[ci]
        if stage == "pre":
            start, end = serve(arrival, p.host_pre_s)
            started[ci] = start
            heapq.heappush(heap, (end + p.exec_s, lane, seq, ci, "post"))
        else:
            _, end = serve(arrival, p.drain_s)
            records.append(CallRecord(ci, lane, trace[ci], p, started[ci], end))
            pos[lane] += 1
            if pos[lane] < len(queues[lane]):
                heapq.heappush(heap, (end, lane, seq, queues[lane][pos[lane]], "pre"))
        seq += 1

    records.sort(key=lambda r: r.index)
    per_lane = [PhaseBreakdown() for _ in range(lanes)]
    for r in records:
        per_lane[r.lane] = per_lane[r.lane] + r.phases
    makespan = max((r.end_s for r in records), default=0.0)
    return SimulationResult(config, records, per_lane, makespan)


@dataclass(frozen=True)
class SweepRow:
    lanes: int
    makespan_s: float
    speedup: float
    marginal_speedup: float


def sweep_lanes(trace, config: MachineConfig | None = None, lane_counts=range(1, MAX_LANES + 1), mappings=None):
    """Makespan per lane count plus the saturation knee.

    The knee is the first lane count whose marginal speedup over the
    previous count drops below 1.1x (None if it never does).
    """
    config = config or MachineConfig()
    trace = list(trace)
    rows: list[SweepRow] = []
    base = None
    prev = None
    for n in lane_counts:
        span = simulate_trace(trace, config.replace(lanes=n), mappings).makespan_s
        base = span if base is None else base
        speedup = base / span if span else 1.0
        marginal = prev / span if prev is not None and span else 1.0
        rows.append(SweepRow(n, span, speedup, marginal))
        prev = span
    knee = next((r.lanes for r in rows[1:] if r.marginal_speedup < 1.1), None)
    return rows, knee
