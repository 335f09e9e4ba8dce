"""Constraint emitters for the storage model and the surrounding network.

Columns are per-unit on ``net.base_mva``: powers in pu, buffer energy in
pu*h, lifted squared voltage/current magnitudes in pu^2. Costs are in $.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse.csgraph import connected_components
import scipy.sparse as sp

from .datamodel import Network, TimeGrid, ValidationError, per_phase_rating, validate_network
from .discretize import boundary_constraint, energy_dynamics
from .problem import ModelBuilder, ProblemInstance

FORMULATIONS = {
    # cli name: (tag, network kind, complementarity mode)
    "dc-mi": ("DC-MI", "dc", "binary"),
    "soc-mi": ("SOC-MI", "soc", "binary"),
    "relaxed-dc": ("DC-RELAXED", "dc", "relaxed"),
    "relaxed-soc": ("SOC-RELAXED", "soc", "relaxed"),
}
DEFAULT_SEGMENTS = 32


def stor(dev_id):
    return f"stor:{dev_id}"


def gen(gen_id):
    return f"gen:{gen_id}"


def bus(bus_id):
    return f"bus:{bus_id}"


def branch(br_id):
    return f"branch:{br_id}"


def _check(net, grid):
    findings = validate_network(net, grid)
    if findings:
        raise ValidationError(findings)


def bus_w(m: ModelBuilder, net: Network, bus_id, p, k) -> int:
    """Lifted squared voltage magnitude column of (bus, conductor, step)."""
    key = (bus(bus_id), "w", p, k)
    if m.has(key):
        return m.col(key)
    b = net.bus(bus_id)
    return m.var(key, b.u_min.get(p, 0.0) ** 2, b.u_max.get(p, np.inf) ** 2)


def _storage_core(m: ModelBuilder, dev, net: Network, grid: TimeGrid, reactive: bool):
    """Columns shared by every storage fidelity plus split/energy/boundary rows."""
    base = net.base_mva
    rating = per_phase_rating(dev, dev.conductors)
    ent = stor(dev.id)
    n = grid.n
    for k in range(n):
        s = dev.status[k]
        for p in dev.conductors:
            m.var((ent, "p", p, k), -s * rating[p] / base, s * rating[p] / base)
            if reactive:
                m.var((ent, "q", p, k), -s * rating[p] / base, s * rating[p] / base)
        m.var((ent, "pstor", None, k), -dev.s_rating_total / base, dev.s_rating_total / base)
        m.var((ent, "pc", None, k), 0.0, dev.p_c_max / base)
        m.var((ent, "pd", None, k), 0.0, dev.p_d_max / base)
        m.var((ent, "e", None, k), 0.0, dev.e_max / base)
        if reactive:
            m.var((ent, "qint", None, k), -s * dev.s_rating_total / base, s * dev.s_rating_total / base)

    for k in range(n):
        m.row(
            [(m.col((ent, "pstor", None, k)), 1.0), (m.col((ent, "pd", None, k)), -1.0),
             (m.col((ent, "pc", None, k)), 1.0)],
            "==", 0.0, f"{ent}_split_{k + 1}", "storage_split",
        )

    dyn = energy_dynamics(dev, grid, e_init=dev.e_init / base)
    for k in range(n):
        terms = [(m.col((ent, "e", None, k)), 1.0)]
        if k > 0:
            terms.append((m.col((ent, "e", None, k - 1)), -1.0))
        terms += [(m.col((ent, "pc", None, k)), -dyn.charge[k, 0]),
                  (m.col((ent, "pd", None, k)), -dyn.discharge[k, 0])]
        if k > 0 and dyn.charge[k, 1] != 0.0:
            terms += [(m.col((ent, "pc", None, k - 1)), -dyn.charge[k, 1]),
                      (m.col((ent, "pd", None, k - 1)), -dyn.discharge[k, 1])]
        m.row(terms, "==", dyn.rhs[k], f"{ent}_energy_{k + 1}", "energy")

    bnd = boundary_constraint(dev, n)
    if bnd is not None:
        m.row([(m.col((ent, "e", None, n - 1)), 1.0)], bnd.sense, bnd.rhs / base,
              f"{ent}_boundary", "boundary")


def emit_storage_dc(m: ModelBuilder, net: Network, grid: TimeGrid):
    """Active-power-only storage model (no reactive power, no copper loss)."""
    base = net.base_mva
    for dev in net.storages:
        _storage_core(m, dev, net, grid, reactive=False)
        ent = stor(dev.id)
        for k in range(grid.n):
            terms = [(m.col((ent, "p", p, k)), 1.0) for p in dev.conductors]
            terms += [(m.col((ent, "pd", None, k)), 1.0), (m.col((ent, "pc", None, k)), -1.0)]
            m.row(terms, "==", dev.s_ext[k].real / base, f"{ent}_balance_p_{k + 1}", "storage_balance_p")
    return m


def emit_storage_soc(m: ModelBuilder, net: Network, grid: TimeGrid):
    """Lifted convex storage model with per-phase rotated cones."""
    base = net.base_mva
    for dev in net.storages:
        _storage_core(m, dev, net, grid, reactive=True)
        ent = stor(dev.id)
        rating = per_phase_rating(dev, dev.conductors)
        for k in range(grid.n):
            s = dev.status[k]
            for p in dev.conductors:
                i_max = None if dev.i_rating_phase is None else dev.i_rating_phase.get(p)
                l_ub = (s * i_max) ** 2 if i_max is not None else (np.inf if s else 0.0)
                m.var((ent, "l", p, k), 0.0, l_ub)
            re_terms = [(m.col((ent, "p", p, k)), 1.0) for p in dev.conductors]
            re_terms += [(m.col((ent, "pd", None, k)), 1.0), (m.col((ent, "pc", None, k)), -1.0)]
            re_terms += [(m.col((ent, "l", p, k)), -dev.z(p).real) for p in dev.conductors]
            m.row(re_terms, "==", dev.s_ext[k].real / base, f"{ent}_balance_p_{k + 1}", "storage_balance_p")
            im_terms = [(m.col((ent, "q", p, k)), 1.0) for p in dev.conductors]
            im_terms += [(m.col((ent, "qint", None, k)), -1.0)]
            im_terms += [(m.col((ent, "l", p, k)), -dev.z(p).imag) for p in dev.conductors]
            m.row(im_terms, "==", dev.s_ext[k].imag / base, f"{ent}_balance_q_{k + 1}", "storage_balance_q")
            for p in dev.conductors:
                pq = (m.col((ent, "p", p, k)), m.col((ent, "q", p, k)))
                m.cone(pq, u=bus_w(m, net, dev.bus, p, k), v=m.col((ent, "l", p, k)), family="storage_lifted")
                cap = s * rating[p] / base
                if cap > 0 and np.isfinite(cap):
                    m.cone(pq, u_const=cap, v_const=cap, family="storage_apparent")
    return m


def emit_complementarity(m: ModelBuilder, dev, grid: TimeGrid, mode: str = "binary", base_mva: float = 1.0):
    """Big-M rows ``Pc <= Pc_max z`` and ``Pd <= Pd_max (1 - z)`` with M equal to the ratings."""
    if mode not in ("binary", "relaxed"):
        raise ValueError(f"unknown complementarity mode {mode!r}")
    if not (np.isfinite(dev.p_c_max) and np.isfinite(dev.p_d_max)):
        raise ValueError(f"{dev.id}: complementarity needs finite charge/discharge ratings")
    ent = stor(dev.id)
    for k in range(grid.n):
        z = m.var((ent, "z", None, k), 0.0, 1.0, binary=(mode == "binary"))
        m.row([(m.col((ent, "pc", None, k)), 1.0), (z, -dev.p_c_max / base_mva)], "<=", 0.0,
              f"{ent}_comp_c_{k + 1}", "complementarity")
        m.row([(m.col((ent, "pd", None, k)), 1.0), (z, dev.p_d_max / base_mva)], "<=", dev.p_d_max / base_mva,
              f"{ent}_comp_d_{k + 1}", "complementarity")
    return m


def _check_connected(net: Network):
    idx = net.bus_index()
    for p in net.conductors:
        members = [idx[b.id] for b in net.buses if p in b.conductors]
        if len(members) <= 1:
            continue
        edges = [(idx[br.from_bus], idx[br.to_bus]) for br in net.branches if br.conductor == p]
        if not edges:
            raise ValueError(f"network is disconnected on conductor {p}")
        i, j = zip(*edges)
        g = sp.coo_matrix((np.ones(len(i)), (i, j)), shape=(len(idx), len(idx)))
        _, labels = connected_components(g, directed=False)
        if len(set(labels[members])) > 1:
            raise ValueError(f"network is disconnected on conductor {p}")


def _gen_columns(m, net, grid, reactive):
    base = net.base_mva
    for g in net.generators:
        for k in range(grid.n):
            m.var((gen(g.id), "p", g.conductor, k), g.p_min / base, g.p_max / base)
            if reactive:
                m.var((gen(g.id), "q", g.conductor, k), g.q_min / base, g.q_max / base)


def _storage_at(net, bus_id, p):
    return [d for d in net.storages if d.bus == bus_id and p in d.conductors]


def emit_network(m: ModelBuilder, net: Network, grid: TimeGrid, kind: str = "dc"):
    """Nodal balances and branch physics per conductor and step.

    ``dc``: B-theta flows with MW limits and a fixed reference angle.
    ``soc``: branch-flow relaxation with rotated cones on series flows.
    Generation enters with +1, storage converter draw with -1.
    """
    if kind not in ("dc", "soc"):
        raise ValueError(f"unknown network kind {kind!r}")
    _check_connected(net)
    base = net.base_mva
    reactive = kind == "soc"
    _gen_columns(m, net, grid, reactive)
    n = grid.n
    for k in range(n):
        for p in net.conductors:
            buses = [b for b in net.buses if p in b.conductors]
            p_terms = {b.id: [] for b in buses}
            q_terms = {b.id: [] for b in buses}
            for g in net.generators:
                if g.conductor == p:
                    p_terms[g.bus].append((m.col((gen(g.id), "p", p, k)), 1.0))
                    if reactive:
                        q_terms[g.bus].append((m.col((gen(g.id), "q", p, k)), 1.0))
            for b in buses:
                for d in _storage_at(net, b.id, p):
                    p_terms[b.id].append((m.col((stor(d.id), "p", p, k)), -1.0))
                    if reactive:
                        q_terms[b.id].append((m.col((stor(d.id), "q", p, k)), -1.0))

            if kind == "dc":
                ref = net.ref_bus if any(b.id == net.ref_bus for b in buses) else buses[0].id
                for b in buses:
                    fixed = 0.0 if b.id == ref else None
                    lo, hi = (fixed, fixed) if fixed is not None else (-np.inf, np.inf)
                    m.var((bus(b.id), "theta", p, k), lo, hi)
                for br in net.branches:
                    if br.conductor != p:
                        continue
                    rate = br.rate / base
                    f = m.var((branch(br.id), "pf", p, k), -rate, rate)
                    tf = m.col((bus(br.from_bus), "theta", p, k))
                    tt = m.col((bus(br.to_bus), "theta", p, k))
                    m.row([(f, 1.0), (tf, -1.0 / br.x), (tt, 1.0 / br.x)], "==", 0.0,
                          f"{branch(br.id)}_dcflow_{p}_{k + 1}", "dc_flow")
                    p_terms[br.from_bus].append((f, -1.0))
                    p_terms[br.to_bus].append((f, 1.0))
                for b in buses:
                    load = b.demand(p, n)[k]
                    m.row(p_terms[b.id], "==", (load.real + b.gs) / base,
                          f"{bus(b.id)}_balance_p_{p}_{k + 1}", "nodal_p")
            else:
                for b in buses:
                    w = bus_w(m, net, b.id, p, k)
                    p_terms[b.id].append((w, -b.gs / base))
                    q_terms[b.id].append((w, b.bs / base))
                for br in net.branches:
                    if br.conductor != p:
                        continue
                    _emit_soc_branch(m, net, br, p, k, p_terms, q_terms)
                for b in buses:
                    load = b.demand(p, n)[k]
                    m.row(p_terms[b.id], "==", load.real / base, f"{bus(b.id)}_balance_p_{p}_{k + 1}", "nodal_p")
                    m.row(q_terms[b.id], "==", load.imag / base, f"{bus(b.id)}_balance_q_{p}_{k + 1}", "nodal_q")
    return m


def _emit_soc_branch(m, net, br, p, k, p_terms, q_terms):
    base = net.base_mva
    ent = branch(br.id)
    rate = br.rate / base
    pf = m.var((ent, "pf", p, k), -rate, rate)
    qf = m.var((ent, "qf", p, k), -rate, rate)
    pt = m.var((ent, "pt", p, k), -rate, rate)
    qt = m.var((ent, "qt", p, k), -rate, rate)
    l = m.var((ent, "l", p, k), 0.0, np.inf)
    wf = bus_w(m, net, br.from_bus, p, k)
    wt = bus_w(m, net, br.to_bus, p, k)
    hb = br.b / 2.0
    name = f"{ent}_{p}_{k + 1}"
    # series reactive flow at the from end: q_fr + (b/2) w_fr
    if hb != 0.0:
        qs = m.var((ent, "qs", p, k), -np.inf, np.inf)
        m.row([(qs, 1.0), (qf, -1.0), (wf, -hb)], "==", 0.0, f"{name}_qseries", "branch_series")
    else:
        qs = qf
    r, x = br.r, br.x
    m.row([(pf, 1.0), (pt, 1.0), (l, -r)], "==", 0.0, f"{name}_loss_p", "branch_loss")
    m.row([(qf, 1.0), (qt, 1.0), (l, -x), (wf, hb), (wt, hb)], "==", 0.0, f"{name}_loss_q", "branch_loss")
    m.row([(wt, 1.0), (wf, -1.0), (pf, 2 * r), (qs, 2 * x), (l, -(r * r + x * x))], "==", 0.0,
          f"{name}_vdrop", "branch_vdrop")
    m.cone((pf, qs), u=wf, v=l, family="branch_lifted")
    if np.isfinite(rate):
        m.cone((pf, qf), u_const=rate, v_const=rate, family="branch_thermal")
        m.cone((pt, qt), u_const=rate, v_const=rate, family="branch_thermal")
    p_terms[br.from_bus].append((pf, -1.0))
    p_terms[br.to_bus].append((pt, -1.0))
    q_terms[br.from_bus].append((qf, -1.0))
    q_terms[br.to_bus].append((qt, -1.0))


def pwl_breakpoints(g, segments: int):
    """Breakpoints (MW) and secant values ($/h) of a generator's quadratic cost."""
    if segments < 1:
        raise ValueError("segments must be >= 1")
    c2 = g.cost[0]
    if c2 < 0:
        raise ValueError(f"generator {g.id}: c2 < 0 makes the cost nonconvex")
    if g.p_max <= g.p_min:
        pts = np.array([g.p_min])
    elif c2 == 0:
        pts = np.array([g.p_min, g.p_max])
    else:
        pts = np.linspace(g.p_min, g.p_max, segments + 1)
    return pts, g.cost_rate(pts)


def pwl_cost(g, p_mw, segments: int = DEFAULT_SEGMENTS):
    """Secant piecewise-linear cost ($/h) at ``p_mw``."""
    pts, vals = pwl_breakpoints(g, segments)
    if len(pts) == 1:
        return np.full_like(np.asarray(p_mw, dtype=float), vals[0])
    return np.interp(p_mw, pts, vals)


def pwl_error_bound(g, segments: int) -> float:
    """Worst-case secant overestimate of the cost rate ($/h)."""
    if g.p_max <= g.p_min or g.cost[0] == 0:
        return 0.0
    return g.cost[0] * (g.p_max - g.p_min) ** 2 / (4.0 * segments ** 2)


def build_objective(m: ModelBuilder, net: Network, grid: TimeGrid, segments: int = DEFAULT_SEGMENTS):
    """Convex piecewise-linear secant generation cost.

    Each generator/step gets incremental segment columns ``seg<i>`` with
    ``P = p_min + sum(seg)``; segment slopes increase, so the LP fills them
    in order and the minimum equals the secant interpolant. Returns the
    summed approximation error bound in $.
    """
    base = net.base_mva
    err = 0.0
    for g in net.generators:
        pts, vals = pwl_breakpoints(g, segments)
        for k in range(grid.n):
            T = grid.durations[k]
            pcol = m.var((gen(g.id), "p", g.conductor, k), g.p_min / base, g.p_max / base)
            m.c0 += T * vals[0]
            if len(pts) == 1:
                continue
            terms = [(pcol, 1.0)]
            widths = np.diff(pts)
            slopes = np.diff(vals) / widths
            for s, (wd, sl) in enumerate(zip(widths, slopes)):
                j = m.var((gen(g.id), f"seg{s}", g.conductor, k), 0.0, wd / base, cost=T * sl * base)
                terms.append((j, -1.0))
            m.row(terms, "==", g.p_min / base, f"{gen(g.id)}_pwl_{k + 1}", "pwl")
            err += pwl_error_bound(g, segments) * T
    m.meta["pwl_error_bound"] = m.meta.get("pwl_error_bound", 0.0) + err
    m.meta["segments"] = segments
    return err


def build_problem(net: Network, grid: TimeGrid, formulation: str = "dc-mi",
                  segments: int = DEFAULT_SEGMENTS, validate: bool = True) -> ProblemInstance:
    """Assemble one of ``dc-mi``, ``soc-mi``, ``relaxed-dc``, ``relaxed-soc``."""
    if formulation not in FORMULATIONS:
        raise ValueError(f"unknown formulation {formulation!r}; choose from {sorted(FORMULATIONS)}")
    if validate:
        _check(net, grid)
    tag, kind, mode = FORMULATIONS[formulation]
    m = ModelBuilder(tag)
    if kind == "dc":
        emit_storage_dc(m, net, grid)
    else:
        emit_storage_soc(m, net, grid)
    for dev in net.storages:
        emit_complementarity(m, dev, grid, mode, net.base_mva)
    emit_network(m, net, grid, kind)
    build_objective(m, net, grid, segments)
    m.meta.update(formulation=formulation, base_mva=net.base_mva, n_steps=grid.n, rule=grid.rule)
    return m.build()


def expected_column_count(net: Network, grid: TimeGrid, formulation: str, segments: int = DEFAULT_SEGMENTS) -> int:
    """Closed-form column count of :func:`build_problem`."""
    _, kind, _ = FORMULATIONS[formulation]
    per_step = 0
    for d in net.storages:
        nc = len(d.conductors)
        per_step += nc + 5 if kind == "dc" else 3 * nc + 6
    bus_cond = sum(len(b.conductors) for b in net.buses)
    per_step += bus_cond
    for g in net.generators:
        per_step += 1 if kind == "dc" else 2
        per_step += len(pwl_breakpoints(g, segments)[0]) - 1
    for br in net.branches:
        per_step += 1 if kind == "dc" else 5 + (br.b != 0)
    return per_step * grid.n


from .ac import ac_model_description, copper_loss, emit_storage_ac_residuals  # noqa: E402,F401
