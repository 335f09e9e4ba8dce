import functools

import numpy as np
import pytest

from gridstorage.datamodel import Bus, Generator, Network, StorageDevice, TerminalCondition, TimeGrid
from gridstorage.ingest import load_bundled, make_three_phase
from gridstorage.solve import SolveOptions, solve_case


def toy_network(z=0j, with_storage=True, loads=(2.0, 10.0), rule="endpoint"):
    """One bus, loads (2, 10) MW over two 1 h steps, c2 = 0.2, lossless 4 MW storage."""
    grid = TimeGrid.uniform(1.0, len(loads), rule)
    bus = Bus("1", ("a",), {"a": 0.9}, {"a": 1.1}, {"a": np.array(loads, dtype=complex)})
    gen = Generator("1", "1", 0.0, 16.0, -100.0, 100.0, (0.2, 0.0, 0.0))
    dev = StorageDevice(
        id="1", bus="1", status=np.ones(len(loads)), s_ext=np.zeros(len(loads), dtype=complex),
        s_rating_total=100.0, eta_c=1.0, eta_d=1.0, e_init=0.0, e_max=100.0, p_c_max=4.0, p_d_max=4.0,
        z_phase={"a": z}, terminal_condition=TerminalCondition("terminal_ge_initial"),
    )
    return Network(1.0, ("a",), [bus], [], [gen], [dev] if with_storage else []), grid


@pytest.fixture
def toy():
    return toy_network()


@functools.lru_cache(maxsize=None)
def bundled():
    return load_bundled()


@functools.lru_cache(maxsize=None)
def bundled_three_phase():
    net, grid = bundled()
    return make_three_phase(net), grid


@functools.lru_cache(maxsize=None)
def solved(case: str, formulation: str, storage: bool = True):
    """Session-wide cache of the expensive bundled-case solves."""
    if case == "14bus":
        net, grid = bundled()
    elif case == "14bus-3p":
        net, grid = bundled_three_phase()
    elif case == "toy":
        net, grid = load_bundled("toy_2step.json")
    else:
        raise KeyError(case)
    if not storage:
        net = net.replace(storages=())
    return solve_case(net, grid, formulation, opts=SolveOptions())


@pytest.fixture(scope="session")
def case14():
    return bundled()


ACCEPTANCE = []


def record_criterion(number: int, ok: bool, detail: str) -> str:
    """Store and print the one-line verdict of an acceptance criterion."""
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
