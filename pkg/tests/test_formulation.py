import dataclasses

import numpy as np
import pytest

from gridstorage.datamodel import ValidationError
from gridstorage.formulation import (
    FORMULATIONS, ac_model_description, build_problem, copper_loss, expected_column_count, pwl_breakpoints,
    pwl_cost, pwl_error_bound,
)
from gridstorage.ingest import make_three_phase
from gridstorage.solve import SolveOptions, solve_case

from conftest import bundled, toy_network


@pytest.mark.parametrize("formulation", sorted(FORMULATIONS))
def test_column_count_matches_closed_form(formulation):
    net, grid = bundled()
    pi = build_problem(net, grid, formulation)
    assert pi.n_cols == expected_column_count(net, grid, formulation)


@pytest.mark.parametrize("formulation", ["dc-mi", "soc-mi"])
def test_three_phase_column_count(formulation):
    net, grid = bundled()
    net3 = make_three_phase(net)
    assert build_problem(net3, grid, formulation).n_cols == expected_column_count(net3, grid, formulation)


def test_row_families(case14):
    net, grid = case14
    dc = build_problem(net, grid, "dc-mi")
    soc = build_problem(net, grid, "soc-mi")
    for fam in ("energy", "storage_split", "storage_balance_p", "complementarity", "pwl"):
        assert len(dc.rows_in(fam)) > 0
    assert len(dc.rows_in("storage_balance_q")) == 0 and not dc.cones
    assert len(soc.rows_in("storage_balance_q")) == grid.n
    assert {c.family for c in soc.cones} >= {"storage_lifted", "storage_apparent"}
    assert len(dc.binaries) == grid.n and len(soc.binaries) == grid.n


def test_relaxed_variant_has_no_binaries(case14):
    net, grid = case14
    pi = build_problem(net, grid, "relaxed-dc")
    assert len(pi.binaries) == 0
    z = [pi.col(k) for k in pi.keys if k[1] == "z"]
    assert len(z) == grid.n and np.all(pi.lb[z] == 0) and np.all(pi.ub[z] == 1)


def test_invalid_case_is_refused():
    net, grid = toy_network()
    dev = net.storages[0]
    bad = net.replace(storages=(dataclasses.replace(dev, eta_d=0.0),))
    with pytest.raises(ValidationError):
        build_problem(bad, grid)
    with pytest.raises(ValueError, match="unknown formulation"):
        build_problem(net, grid, "ac-nl")


def test_pwl_secant_error_bound():
    net, _ = bundled()
    for g in net.generators:
        for segments in (1, 4, 32):
            p = np.linspace(g.p_min, g.p_max, 2001)
            err = pwl_cost(g, p, segments) - g.cost_rate(p)
            assert np.all(err >= -1e-9)
            assert err.max() <= pwl_error_bound(g, segments) * (1 + 1e-9) + 1e-12
    pts, vals = pwl_breakpoints(net.generators[0], 32)
    assert len(pts) == 33 and np.all(np.diff(np.diff(vals) / np.diff(pts)) > 0)


def test_toy_storage_shifts_energy():
    net, grid = toy_network()
    res = solve_case(net, grid, "dc-mi")
    assert res.status == "optimal"
    np.testing.assert_allclose(res.solution.p_c[0], [4.0, 0.0], atol=1e-7)
    np.testing.assert_allclose(res.solution.p_d[0], [0.0, 4.0], atol=1e-7)
    assert res.objective == pytest.approx(14.4, abs=1e-6)


def test_external_flow_enters_dc_balance():
    net, grid = toy_network()
    dev = net.storages[0]
    # a 1 MW standby sink drawn through the converter raises the grid draw in both steps
    sink = net.replace(storages=(dataclasses.replace(dev, s_ext=np.array([1.0, 1.0], dtype=complex)),))
    a = solve_case(net, grid, "dc-mi").objective
    b = solve_case(sink, grid, "dc-mi").objective
    assert b > a


def test_soc_loss_is_paid_in_the_lifted_balance():
    lossless = solve_case(*toy_network(z=0j), "soc-mi").objective
    lossy_net, grid = toy_network(z=0.05 + 0.02j)
    lossy = solve_case(lossy_net, grid, "soc-mi")
    assert lossy.objective > lossless
    sol = lossy.solution
    p, q, l = sol.p[0][0], sol.q[0][0], sol.l[0][0]
    w = sol.w[0][0]
    # the cone is tight at the optimum for the charging step
    assert p[0] ** 2 + q[0] ** 2 == pytest.approx(w[0] * l[0], rel=1e-4)


def test_copper_loss_scales_with_current():
    assert copper_loss(0.1 + 0.01j, 1.0, 1.0) == pytest.approx(0.1 + 0.01j)
    assert copper_loss(0.1, 2.0, 1.0) == pytest.approx(0.4)
    assert copper_loss(0.1, 1.0, 0.5) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        copper_loss(0.1, 1.0, 0.0)


@pytest.mark.parametrize("mode", ["nl", "mi"])
def test_ac_description(mode, case14):
    doc = ac_model_description(*case14, mode)
    assert set(doc) >= {"case", "index_sets", "variables", "constraints", "objective"}
    assert {"energy", "balance", "split", "nodal_balance"} <= set(doc["constraints"])
    comp = " ".join(doc["constraints"]["complementarity"])
    assert ("in {0,1}" in comp) == (mode == "mi")
    assert ("Pc[c,k] * Pd[c,k] == 0" in comp) == (mode == "nl")


def test_simplex_backend_agrees_on_toy():
    net, grid = toy_network(loads=(3.0, 1.0, 9.0))
    a = solve_case(net, grid, "relaxed-dc", segments=6)
    b = solve_case(net, grid, "relaxed-dc", segments=6, opts=SolveOptions(backend="simplex"))
    assert a.objective == pytest.approx(b.objective, rel=1e-9)
