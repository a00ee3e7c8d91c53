import pytest

from qcgla.machine import KernelCall, MachineConfig

# 840 identical calls divide evenly across any lane count from 1 to 8
TRACE_LEN = 840


@pytest.fixture
def host_bound():
    """Host service time per call dwarfs EXEC, so two host cores cap throughput."""
    trace = [KernelCall("q8_0", 16, 256) for _ in range(TRACE_LEN)]
    return trace, MachineConfig(host_cores=2, host_service_seconds_per_call=1e-3)


@pytest.fixture
def exec_bound():
    trace = [KernelCall("q3_k", 4096, 256) for _ in range(TRACE_LEN)]
    return trace, MachineConfig(host_cores=2)


_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; lines are echoed in the terminal summary."""

    def record(ac: str, ok: bool, detail: str) -> bool:
        line = f"{ac}: {'PASS' if ok else 'FAIL'} {detail}"
        _ACCEPTANCE[ac] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for ac in sorted(_ACCEPTANCE, key=lambda s: int(s[2:])):
            terminalreporter.write_line(_ACCEPTANCE[ac])
