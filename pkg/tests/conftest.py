"""Shared fixtures: the two-bus path, the three-bus triangle and IEEE 14."""
import numpy as np
import pytest

from gridattack.grid import GridTopology, MeasurementDescriptor as MD, build_measurement_system

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def p2_system():
    topo = GridTopology.from_edges(2, [(1, 2, 1.0)])
    return build_measurement_system(topo, [MD.flow(0), MD.angle(1), MD.angle(2)], 0.1)


def t3_system(protected=()):
    """Triangle: m1=(1,2), m2=(1,3), m3=(2,3), then angles at buses 1, 2, 3."""
    topo = GridTopology.from_edges(3, [(1, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)])
    meters = [MD.flow(0), MD.flow(1), MD.flow(2), MD.angle(1), MD.angle(2), MD.angle(3)]
    system = build_measurement_system(topo, meters, 0.1)
    return system.with_protection(protected) if protected else system


@pytest.fixture
def p2():
    return p2_system()


@pytest.fixture
def t3():
    return t3_system()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
