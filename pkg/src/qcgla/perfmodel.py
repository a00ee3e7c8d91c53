"""
Energy and end-to-end latency analytics.

Power-delay product is time multiplied by power; when a phase breakdown is
given, each phase is charged at its own power.  End-to-end latency follows
a serial offload model::

    latency = host_only * (1 - offload_fraction) + accel_time + overhead
              - overlap * min(accel_time, host_only * (1 - offload_fraction))
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import os
from dataclasses import dataclass, field

from qcgla.errors import ConfigError, InvalidInput
from qcgla.machine import ASIC_FREQ_HZ, ASIC_TABLE_FREQ_HZ, CYCLE_PHASES, FPGA_FREQ_HZ, PHASES, PhaseBreakdown


def pdp(time, power) -> float:
    """Energy in joules.

    ``time`` is seconds or a :class:`PhaseBreakdown`; ``power`` is watts or a
    mapping from phase name to watts (phases missing from the mapping draw
    nothing).
    """
    if isinstance(time, PhaseBreakdown):
        times = time.as_dict()
    else:
        times = {"total": float(time)}
    if isinstance(power, dict):
        unknown = set(power) - set(times)
        if unknown:
            raise InvalidInput(f"power given for unknown phases {sorted(unknown)}")
        watts = {p: float(power.get(p, 0.0)) for p in times}
    else:
        watts = {p: float(power) for p in times}
    if any(t < 0 or math.isnan(t) for t in times.values()) or any(w < 0 or math.isnan(w) for w in watts.values()):
        raise InvalidInput("time and power must be non-negative")
    return sum(times[p] * watts[p] for p in times)


def freq_projection(time, f_from: float, f_to: float):
    """Rescale cycle-derived time from one clock to another.

    A :class:`PhaseBreakdown` keeps its host CPU term and rescales the rest.
    """
    if not (f_from > 0 and f_to > 0):
        raise InvalidInput("frequencies must be positive")
    if isinstance(time, PhaseBreakdown):
        d = time.as_dict()
        for p in CYCLE_PHASES:
            d[p] = d[p] * f_from / f_to
        return PhaseBreakdown(**d)
    return time * f_from / f_to


@dataclass(frozen=True)
class E2EInputs:
    host_only_latency_s: float
    offload_fraction: float
    accel_kernel_time_s: float
    overhead_s: float = 0.0
    overlap: float = 0.0
    host_w: float = 0.0
    accel_w: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.offload_fraction <= 1.0:
            raise InvalidInput(f"offload fraction {self.offload_fraction} outside [0, 1]")
        if not 0.0 <= self.overlap <= 1.0:
            raise InvalidInput(f"overlap {self.overlap} outside [0, 1]")
        if min(self.host_only_latency_s, self.accel_kernel_time_s, self.host_w, self.accel_w) < 0:
            raise InvalidInput("times and powers must be non-negative")

    @property
    def host_kernel_time_s(self) -> float:
        return self.host_only_latency_s * self.offload_fraction

    @property
    def host_rest_s(self) -> float:
        return self.host_only_latency_s - self.host_kernel_time_s


def e2e_compose(inputs: E2EInputs) -> float:
    rest = inputs.host_rest_s
    hidden = inputs.overlap * min(inputs.accel_kernel_time_s, rest)
    return rest + inputs.accel_kernel_time_s + inputs.overhead_s - hidden


def e2e_energy(inputs: E2EInputs) -> float:
    """Host power accrues over the whole run, accelerator power over its kernel time."""
    return pdp(e2e_compose(inputs), inputs.host_w) + pdp(inputs.accel_kernel_time_s, inputs.accel_w)


@dataclass(frozen=True)
class OffloadCalibration:
    """Offload model fitted to a host-only run and two accelerator runs.

    The accelerator kernel time scales with clock (``speedup``), the
    transfer/overhead term does not.  The host kernel share comes from the
    profiled fraction of host time spent in the offloaded kernel.
    """

    host_only_latency_s: float
    offload_fraction: float
    slow_latency_s: float
    fast_latency_s: float
    speedup: float
    host_kernel_time_s: float
    accel_slow_s: float
    accel_fast_s: float
    overhead_s: float

    def inputs(self, fast: bool = True, **power) -> E2EInputs:
        return E2EInputs(
            self.host_only_latency_s,
            self.offload_fraction,
            self.accel_fast_s if fast else self.accel_slow_s,
            self.overhead_s,
            **power,
        )

    def as_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)


def calibrate_offload(host_only_s: float, slow_s: float, fast_s: float, offload_fraction: float,
                      speedup: float = ASIC_FREQ_HZ / FPGA_FREQ_HZ) -> OffloadCalibration:
    """Solve accelerator time and overhead from the slow/fast composed latencies."""
    if speedup <= 1:
        raise InvalidInput("speedup must exceed 1")
    if not 0.0 <= offload_fraction <= 1.0:
        raise InvalidInput("offload fraction outside [0, 1]")
    accel_slow = (slow_s - fast_s) / (1.0 - 1.0 / speedup)
    rest = host_only_s * (1.0 - offload_fraction)
    overhead = slow_s - rest - accel_slow
    if accel_slow < 0 or overhead < -1e-9:
        raise InvalidInput("latencies are inconsistent with a non-negative offload model")
    return OffloadCalibration(
        host_only_latency_s=host_only_s,
        offload_fraction=offload_fraction,
        slow_latency_s=slow_s,
        fast_latency_s=fast_s,
        speedup=speedup,
        host_kernel_time_s=host_only_s * offload_fraction,
        accel_slow_s=accel_slow,
        accel_fast_s=accel_slow / speedup,
        overhead_s=max(overhead, 0.0),
    )


# ---------------------------------------------------------------------------
# devices and comparison reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    power_w: float | dict
    freq_hz: float
    host: str | None = None
    note: str = ""

    def __post_init__(self):
        values = self.power_w.values() if isinstance(self.power_w, dict) else [self.power_w]
        if not all(v > 0 for v in values):
            raise InvalidInput(f"{self.name}: power must be positive")

    def power_for(self, kernel: str | None = None) -> float:
        if isinstance(self.power_w, dict):
            if kernel is None or kernel.lower() not in self.power_w:
                raise ConfigError(f"{self.name}: power depends on the kernel, got {kernel!r}")
            return self.power_w[kernel.lower()]
        return self.power_w


BUILTIN_DEVICES: dict[str, DeviceProfile] = {
    d.name: d
    for d in [
        DeviceProfile("ARM-Cortex-A72", 1.5, 1.4e9, note="2 cores, 7 nm, on the FPGA SoC"),
        DeviceProfile("IMAX3-FPGA", 180.0, FPGA_FREQ_HZ, host="ARM-Cortex-A72", note="VPK180 prototype, 1 lane"),
        DeviceProfile("IMAX3-28nm", {"q8_0": 47.7, "q3_k": 52.8}, ASIC_FREQ_HZ, host="ARM-Cortex-A72",
                      note="28 nm synthesis estimate at the 840 MHz timing-analysis clock"),
        DeviceProfile("IMAX3-28nm-800MHz", {"q8_0": 47.7, "q3_k": 52.8}, ASIC_TABLE_FREQ_HZ, host="ARM-Cortex-A72",
                      note="28 nm at the tabulated 800 MHz clock"),
        DeviceProfile("Xeon-w5-2465X", 200.0, 3.1e9, note="16 cores, TDP"),
        DeviceProfile("GTX-1080Ti", 250.0, 1.48e9, host="Xeon-w5-2465X", note="3584 CUDA cores, TDP"),
    ]
}


@dataclass(frozen=True)
class ScenarioEntry:
    device: str
    latency_s: float
    accel_time_s: float = 0.0


@dataclass
class Scenario:
    name: str
    kernel: str
    entries: list[ScenarioEntry]
    devices: dict[str, DeviceProfile] = field(default_factory=lambda: dict(BUILTIN_DEVICES))
    calibration: OffloadCalibration | None = None


@dataclass(frozen=True)
class ReportRow:
    device: str
    scenario: str
    latency_s: float
    energy_j: float
    pdp_j: float
    power_w: float
    host_w: float
    accel_time_s: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


REPORT_COLUMNS = tuple(f.name for f in dataclasses.fields(ReportRow))


def compare_report(scenario: Scenario) -> list[ReportRow]:
    """Rank devices by PDP, ties broken by name.

    An entry with accelerator time on a hosted device charges the host's
    power for the full latency plus the device's power for the accelerator
    time.  Any other entry charges the device's power for the full latency.
    """
    if not scenario.entries:
        raise InvalidInput("scenario lists no devices")
    rows = []
    for e in scenario.entries:
        dev = scenario.devices.get(e.device)
        if dev is None:
            raise ConfigError(f"unknown device {e.device!r}")
        power = dev.power_for(scenario.kernel)
        if dev.host is not None and e.accel_time_s > 0:
            host = scenario.devices.get(dev.host)
            if host is None:
                raise ConfigError(f"unknown host device {dev.host!r}")
            host_w = host.power_for(scenario.kernel)
            energy = pdp(e.latency_s, host_w) + pdp(e.accel_time_s, power)
        else:
            host_w = 0.0
            energy = pdp(e.latency_s, power)
        rows.append(ReportRow(e.device, scenario.name, e.latency_s, energy, energy, power, host_w, e.accel_time_s))
    rows.sort(key=lambda r: (r.pdp_j, r.device))
    return rows


# profiled share of the dot-product time taken by the quantized kernel
KERNEL_SHARE = {"q3_k": 0.103, "q8_0": 0.163}

PAPER_LATENCIES = {
    "q3_k": {"ARM-Cortex-A72": 809.7, "IMAX3-FPGA": 790.3, "IMAX3-28nm": 754.5,
             "Xeon-w5-2465X": 59.3, "GTX-1080Ti": 16.2},
    "q8_0": {"ARM-Cortex-A72": 625.1, "IMAX3-FPGA": 654.7, "IMAX3-28nm": 558.0},
}


def paper_calibration(kernel: str) -> OffloadCalibration:
    lat = PAPER_LATENCIES[kernel]
    return calibrate_offload(lat["ARM-Cortex-A72"], lat["IMAX3-FPGA"], lat["IMAX3-28nm"], KERNEL_SHARE[kernel])


def paper_scenario(kernel: str = "q3_k") -> Scenario:
    kernel = kernel.lower()
    if kernel not in PAPER_LATENCIES:
        raise ConfigError(f"no published scenario for {kernel!r}")
    cal = paper_calibration(kernel)
    accel = {"IMAX3-FPGA": cal.accel_slow_s, "IMAX3-28nm": cal.accel_fast_s}
    entries = [ScenarioEntry(name, lat, accel.get(name, 0.0)) for name, lat in PAPER_LATENCIES[kernel].items()]
    return Scenario(f"paper-{kernel}", kernel, entries, calibration=cal)


def load_scenario(path: str | os.PathLike) -> Scenario:
    """Read a scenario from an INI-style file.

    ``[scenario]`` holds ``name`` and ``kernel``; every other section is a
    device.  A device section may define ``power_w`` (or ``power_w.<kernel>``),
    ``freq_hz`` and ``host`` to override or add a profile, and must give
    ``latency_s``; ``accel_time_s`` is optional.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as f:
            cp.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    if not cp.has_section("scenario"):
        raise ConfigError(f"{path}: missing [scenario] section")
    name = cp.get("scenario", "name", fallback=os.path.basename(os.fspath(path)))
    kernel = cp.get("scenario", "kernel", fallback="q3_k").lower()
    devices = dict(BUILTIN_DEVICES)
    entries = []
    for sec in cp.sections():
        if sec == "scenario":
            continue
        s = cp[sec]
        try:
            powers = {k.split(".", 1)[1]: float(v) for k, v in s.items() if k.startswith("power_w.")}
            if "power_w" in s:
                devices[sec] = DeviceProfile(sec, float(s["power_w"]), float(s.get("freq_hz", "1")), s.get("host"))
            elif powers:
                devices[sec] = DeviceProfile(sec, powers, float(s.get("freq_hz", "1")), s.get("host"))
            elif sec not in devices:
                raise ConfigError(f"unknown device {sec!r}")
            entries.append(ScenarioEntry(sec, float(s["latency_s"]), float(s.get("accel_time_s", "0"))))
        except KeyError as e:
            raise ConfigError(f"{path}: [{sec}] missing {e.args[0]}") from None
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"{path}: [{sec}] {e}") from None
    return Scenario(name, kernel, entries, devices)


__all__ = [
    "BUILTIN_DEVICES",
    "DeviceProfile",
    "E2EInputs",
    "KERNEL_SHARE",
    "OffloadCalibration",
    "PAPER_LATENCIES",
    "PHASES",
    "REPORT_COLUMNS",
    "ReportRow",
    "Scenario",
    "ScenarioEntry",
    "calibrate_offload",
    "compare_report",
    "e2e_compose",
    "e2e_energy",
    "freq_projection",
    "load_scenario",
    "paper_calibration",
    "paper_scenario",
    "pdp",
]
