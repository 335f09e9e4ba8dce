import json

import numpy as np
import pytest

from gridstorage.datamodel import ValidationError
from gridstorage.formulation import build_problem
from gridstorage.ingest import (
    CaseError, LoadProfile, DEFAULT_SPLITS, data_path, dump_case, export_json, export_lp, interpolate_profile,
    load_bundled, load_case, make_three_phase, parse_case, read_lp, read_profile_csv, save_case,
    technology_device, without_storage,
)

from conftest import bundled, toy_network


def minimal_doc(**storage):
    dev = dict(id="s", bus="1", s_rating_total=10.0, eta_c=0.9, eta_d=0.9, e_init=1.0, e_max=5.0,
               p_c_max=2.0, p_d_max=2.0, z_phase=[0.01, 0.02])
    dev.update(storage)
    return {
        "base_mva": 10.0, "time": {"dt_hours": 0.5, "n": 3},
        "buses": [{"id": "1", "u_min": 0.95, "u_max": 1.05}],
        "loads": [{"bus": "1", "p_mw": [1, 2, 3], "q_mvar": 0.0}],
        "generators": [{"id": "g", "bus": "1", "p_min": 0, "p_max": 10, "q_min": -5, "q_max": 5,
                        "cost": [0.1, 2.0, 0.0]}],
        "storages": [dev],
    }


def test_bundled_case_shape(case14):
    net, grid = case14
    assert grid.n == 96 and np.all(grid.durations == 0.25) and grid.rule == "endpoint"
    assert len(net.buses) == 14 and len(net.branches) == 20 and len(net.generators) == 5
    (dev,) = net.storages
    assert dev.bus == "13" and dev.eta_c == 0.85 and dev.eta_d == 0.90 and dev.e_init == 1.0
    assert dev.e_max == 200.0 and dev.p_c_max == 100.0 and dev.p_d_max == 75.0 and dev.s_rating_total == 1000.0
    assert dev.z("a") == 0.1 + 0.01j
    assert net.base_mva == 100.0 and all(g.cost[0] > 0 for g in net.generators)


def test_bundled_profile_keeps_hourly_samples(case14):
    net, grid = case14
    hourly = read_profile_csv(data_path("rts96_summer_weekday.csv")).multipliers
    bus = next(b for b in net.buses if b.load)
    base = bus.load["a"][0] / hourly[0]
    np.testing.assert_allclose(bus.load["a"][::4] / base, hourly, rtol=1e-12)


def test_interpolation_keeps_original_points():
    p = LoadProfile(np.array([0.61, 0.73, 0.97, 0.52]))
    q = interpolate_profile(p, 4)
    assert len(q) == 13
    assert np.array_equal(q.multipliers[::4], p.multipliers)
    np.testing.assert_allclose(q.multipliers[1:4], [0.64, 0.67, 0.70], rtol=1e-12)
    np.testing.assert_allclose(q.hours[:5], [0, 0.25, 0.5, 0.75, 1.0])
    assert interpolate_profile(p, 1) is p
    with pytest.raises(ValueError):
        interpolate_profile(p, 2.5)


def test_profile_rejects_negative_multiplier():
    with pytest.raises(ValueError):
        LoadProfile(np.array([1.0, -0.1]))


def test_profile_csv_header(tmp_path):
    bad = tmp_path / "p.csv"
    bad.write_text("h,m\n0,1\n")
    with pytest.raises(CaseError):
        read_profile_csv(bad)


def test_parse_minimal_case():
    net, grid = parse_case(minimal_doc())
    assert grid.n == 3 and grid.durations[0] == 0.5
    dev = net.storages[0]
    assert dev.z("a") == complex(0.01, 0.02)
    np.testing.assert_array_equal(net.buses[0].load["a"], [1, 2, 3])


def test_parse_reports_every_finding():
    with pytest.raises(ValidationError) as info:
        parse_case(minimal_doc(eta_d=0.0, e_init=50.0))
    text = str(info.value)
    assert "eta_d must be > 0" in text and "e_init" in text


def test_parse_schema_errors_carry_a_path():
    doc = minimal_doc()
    del doc["storages"][0]["e_max"]
    with pytest.raises(CaseError, match="storages"):
        parse_case(doc)


def test_rule_override():
    _, grid = parse_case(minimal_doc(), rule="trapezoid")
    assert grid.rule == "trapezoid"


def test_terminal_condition_forms():
    net, _ = parse_case(minimal_doc(terminal_condition={"terminal_fixed": 2.5}))
    assert net.storages[0].terminal_condition.value == 2.5
    net, _ = parse_case(minimal_doc(terminal_condition="terminal_ge_initial"))
    assert net.storages[0].terminal_condition.kind == "terminal_ge_initial"


def test_dump_round_trip(tmp_path, case14):
    net, grid = case14
    path = tmp_path / "case.json"
    save_case(net, grid, path)
    net2, grid2 = load_case(path)
    assert grid2 == grid
    assert dump_case(net2, grid2) == dump_case(net, grid)


def test_three_phase_replicate_conserves_totals(case14):
    net, _ = case14
    net3 = make_three_phase(net)
    assert net3.conductors == ("a", "b", "c")
    assert len(net3.generators) == 15 and len(net3.branches) == 60
    for b, b3 in zip(net.buses, net3.buses):
        if b.load:
            total = sum(b3.load[p] for p in "abc")
            np.testing.assert_allclose(total, b.load["a"], rtol=1e-12)
            np.testing.assert_allclose(b3.load["a"], DEFAULT_SPLITS[0] * b.load["a"], rtol=1e-12)
    (dev,) = net3.storages
    assert sum(dev.s_rating_phase.values()) == pytest.approx(dev.s_rating_total, rel=1e-12)
    assert dev.conductors == ("a", "b", "c")


def test_three_phase_split_errors(case14):
    net, _ = case14
    with pytest.raises(ValueError, match="sum to 1"):
        make_three_phase(net, (0.5, 0.3, 0.3))
    with pytest.raises(ValueError):
        make_three_phase(net, (0.5, 0.5))
    with pytest.raises(ValueError):
        make_three_phase(make_three_phase(net))


def test_without_storage(case14):
    assert without_storage(case14[0]).storages == ()


def test_technology_table():
    dev = technology_device("PHS", "p", "1", 4)
    assert dev.eta_c == 0.90 and dev.eta_d == 0.90
    with pytest.raises(KeyError):
        technology_device("Hydrogen", "h", "1", 4)


@pytest.mark.parametrize("formulation", ["dc-mi", "relaxed-dc"])
def test_lp_round_trip(tmp_path, formulation):
    net, grid = toy_network(z=0.01 + 0.0j)
    pi = build_problem(net, grid, formulation, segments=4)
    path = tmp_path / "m.lp"
    text = export_lp(pi, path)
    assert path.read_text() == text and "End" in text
    back = read_lp(path)
    assert back.names() == pi.names()
    np.testing.assert_array_equal(back.c, pi.c)
    np.testing.assert_array_equal(back.lb, pi.lb)
    np.testing.assert_array_equal(back.ub, pi.ub)
    np.testing.assert_array_equal(back.A.toarray(), pi.A.toarray())
    np.testing.assert_array_equal(back.rhs, pi.rhs)
    assert list(back.sense) == list(pi.sense)
    np.testing.assert_array_equal(back.binaries, pi.binaries)


def test_lp_export_refuses_cones():
    net, grid = bundled()
    pi = build_problem(net, grid, "relaxed-soc")
    with pytest.raises(ValueError, match="cone"):
        export_lp(pi)


def test_json_export_lists_cones():
    net, grid = toy_network(z=0.01 + 0.01j)
    doc = json.loads(export_json(build_problem(net, grid, "relaxed-soc")))
    assert doc["cones"] and len(doc["columns"]) == build_problem(net, grid, "relaxed-soc").n_cols


def test_bundled_lookup():
    net, grid = load_bundled("toy_2step.json")
    assert grid.n == 2 and net.storages[0].p_c_max == 4.0
