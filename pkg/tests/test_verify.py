import dataclasses
import json

import numpy as np
import pytest

from gridstorage.datamodel import Branch, Bus, Network, StorageDevice, TerminalCondition, TimeGrid
from gridstorage.solution import Solution
from gridstorage.verify import (
    ac_reference, admittance, bound_report, check_solution, cone_slack, power_flow, simulate_buffer,
)

from conftest import solved

HAND_SETPOINTS = {"1": 1.06, "2": 1.045, "3": 1.01, "6": 1.06, "8": 1.06}


def device(n, e_init=1.0, e_max=10.0, eta_c=0.9, eta_d=0.8, status=None):
    return StorageDevice(id="s", bus="1", status=np.ones(n) if status is None else status, s_ext=np.zeros(n),
                         s_rating_total=100.0, eta_c=eta_c, eta_d=eta_d, e_init=e_init, e_max=e_max,
                         p_c_max=5.0, p_d_max=5.0, z_phase={"a": 0j}, terminal_condition=TerminalCondition())


def test_simulation_telescopes_over_1e5_steps():
    n = 100_000
    rng = np.random.default_rng(0)
    grid = TimeGrid(rng.uniform(0.001, 0.01, n))
    dev = device(n, e_init=500.0, e_max=1e6)
    p_c = rng.uniform(0, 5, n) * (rng.random(n) < 0.5)
    p_d = np.where(p_c > 0, 0.0, rng.uniform(0, 5, n))
    sim = simulate_buffer(dev, grid, p_c, p_d)
    assert not sim.clipped
    expect = dev.e_init + np.cumsum(grid.durations * (dev.eta_c * p_c - p_d / dev.eta_d))
    np.testing.assert_allclose(sim.energy, expect, rtol=1e-12, atol=1e-9)


def test_simulation_clips_at_capacity_and_empty():
    grid = TimeGrid.uniform(1.0, 4)
    dev = device(4, e_init=1.0, e_max=5.0, eta_c=1.0, eta_d=1.0)
    sim = simulate_buffer(dev, grid, [5.0, 0.0, 0.0, 0.0], [0.0, 0.0, 5.0, 5.0])
    np.testing.assert_allclose(sim.energy, [5.0, 5.0, 0.0, 0.0])
    kinds = [(c.step, c.kind) for c in sim.clips]
    assert kinds == [(1, "charge"), (4, "discharge")]
    assert sim.clips[0].applied == pytest.approx(4.0)
    assert sim.clips[1].applied == pytest.approx(0.0)


def test_simulation_respects_status():
    grid = TimeGrid.uniform(1.0, 2)
    dev = device(2, status=np.array([1.0, 0.0]))
    sim = simulate_buffer(dev, grid, [1.0, 1.0], [0.0, 0.0])
    assert sim.p_c[1] == 0.0 and sim.clips[0].kind == "status"
    with pytest.raises(ValueError):
        simulate_buffer(dev, grid, [1.0], [0.0])


def test_dc_schedule_report(toy):
    net, grid = toy
    res = solved("toy", "dc-mi")
    rep = check_solution(net, grid, res.solution)
    assert rep.feasible
    assert rep.families["voltage"] == {"evaluated": False}
    assert rep.families["active_balance"]["max"] <= 1e-9
    assert "not evaluated" in "\n".join(rep.lines())
    assert json.loads(rep.to_json())["feasible"] is True


def test_perturbed_energy_is_reported(toy):
    net, grid = toy
    sol = solved("toy", "dc-mi").solution
    bad = dataclasses.replace(sol, e=sol.e + np.array([[0.0, 0.5]]))
    rep = check_solution(net, grid, bad)
    assert not rep.feasible
    assert rep.families["energy"]["max"] == pytest.approx(0.5, rel=1e-9)
    assert rep.families["energy"]["worst"][2] == 2


def test_complementarity_violation_is_measured(toy):
    net, grid = toy
    sol = solved("toy", "dc-mi").solution
    pc = sol.p_c.copy()
    pd = sol.p_d.copy()
    pc[0, 1] += 0.5
    pd[0, 1] += 0.5          # energy unchanged for a lossless device, balance unchanged too
    bad = dataclasses.replace(sol, p_c=pc, p_d=pd)
    rep = check_solution(net, grid, bad)
    assert rep.families["complementarity"]["max"] == pytest.approx(0.5 * 4.5, rel=1e-12)
    assert rep.families["energy"]["max"] <= 1e-12


def test_soc_schedule_report_is_lifted(case14):
    net, grid = case14
    sol = solved("14bus", "soc-mi").solution
    rep = check_solution(net, grid, sol)
    assert rep.feasible
    assert "cone" in rep.families
    assert rep.info["cone_slack_max"] >= rep.info["cone_slack_min"] >= -1e-6
    assert cone_slack(net, sol).shape == (1, grid.n)


def test_check_requires_voltages_for_ac(toy):
    net, grid = toy
    sol = dataclasses.replace(solved("toy", "dc-mi").solution, formulation="AC-NL")
    with pytest.raises(ValueError, match="voltage"):
        check_solution(net, grid, sol)


def test_solution_json_round_trip(tmp_path):
    sol = solved("toy", "soc-mi").solution
    path = tmp_path / "s.json"
    sol.to_json(path)
    back = Solution.from_json(path)
    for name in ("p_c", "p_d", "e", "p", "w", "gen_p"):
        np.testing.assert_array_equal(getattr(back, name), getattr(sol, name))
    assert back.objective == sol.objective and back.formulation == sol.formulation


def test_bound_report_orders():
    ok = bound_report({"dc-mi": 1.0, "soc-mi": 2.0}, ac_reference=3.0)
    assert ok["ok"] and ok["soc_ac_gap"] == pytest.approx(1 / 3)
    bad = bound_report({"dc-mi": 2.5, "soc-mi": 2.0}, ac_reference=1.0)
    assert not bad["ok"] and len(bad["violations"]) == 2
    with pytest.raises(ValueError):
        bound_report({"dc-mi": 1.0})


def test_power_flow_two_bus_analytic():
    buses = (Bus("1", ("a",), {"a": 0.9}, {"a": 1.1}), Bus("2", ("a",), {"a": 0.9}, {"a": 1.1}))
    line = Branch("l", "1", "2", 0.0, 0.1, 0.0, 100.0)
    two = Network(1.0, ("a",), buses, (line,), (), (), "1")
    Y, _ = admittance(two, "a")
    np.testing.assert_allclose(Y, [[-10j, 10j], [10j, -10j]])
    # lossless line: P = V1 V2 sin(d) / x
    pf = power_flow(two, "a", np.array([0.0, -0.5]), np.array([0.0, 0.0]), {"1": 1.0})
    assert pf.converged
    v2 = pf.vm[1]
    assert np.sin(-pf.va[1]) * v2 / 0.1 == pytest.approx(0.5, rel=1e-9)
    assert pf.p_inj[0] == pytest.approx(0.5, rel=1e-9)


def test_hand_dispatch_is_ac_feasible(case14):
    net, grid = case14
    n = grid.n
    load = sum(b.load["a"] for b in net.buses if b.load).real
    ref = ac_reference(net, grid, np.zeros((1, n)), np.zeros((1, n)), {"2": 0.15 * load}, HAND_SETPOINTS)
    assert ref.converged and ref.feasible, "\n".join(ref.report.lines())
    assert ref.branch_overload <= 0
    assert ref.cost >= solved("14bus", "soc-mi").bound
