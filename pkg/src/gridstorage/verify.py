"""Ground-truth checks: nonlinear residuals, forward simulation, bound ordering.

Also hosts a small Newton-Raphson power flow used to turn a storage
schedule into an AC-feasible reference point whose cost any valid
relaxation bound must not exceed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ac import FAMILIES, VOLTAGE_FAMILIES, emit_storage_ac_residuals
from .datamodel import Network, StorageDevice, TimeGrid
from .discretize import energy_update
from .formulation import pwl_cost
from .solution import Solution

DC_TAGS = ("DC-MI", "DC-RELAXED")
SOC_TAGS = ("SOC-MI", "SOC-RELAXED")


@dataclass
class ViolationReport:
    """Per-family residual statistics of a schedule.

    ``families[name]`` holds ``evaluated``, ``max``, ``mean``, ``count`` and
    ``worst`` (entity, conductor, 1-based step). ``feasible`` is true iff
    every evaluated family's max is within ``tol``.
    """

    tol: float
    families: dict
    feasible: bool
    info: dict = field(default_factory=dict)

    def to_dict(self):
        return {"tol": self.tol, "feasible": self.feasible, "families": self.families, "info": self.info}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    def lines(self):
        out = [f"feasible={self.feasible} tol={self.tol:g}"]
        for name, f in self.families.items():
            if not f["evaluated"]:
                out.append(f"  {name:<16} not evaluated")
                continue
            worst = "" if f["worst"] is None else " worst=" + "/".join(str(w) for w in f["worst"] if w is not None)
            out.append(f"  {name:<16} max={f['max']:.3e} mean={f['mean']:.3e} n={f['count']}{worst}")
        for name, v in self.info.items():
            out.append(f"  {name}: {v}")
        return out


def _summarize(fr):
    worst = fr.worst
    if worst is not None:
        worst = (worst[0], worst[1], None if worst[2] is None else worst[2] + 1)
    return {"evaluated": True, "max": fr.max, "mean": fr.mean, "count": len(fr.values), "worst": worst}


def check_solution(net: Network, grid: TimeGrid, sol: Solution, tol: float = 1e-6) -> ViolationReport:
    """Evaluate ``sol`` against the nonlinear storage model.

    DC schedules carry no voltages: the voltage-dependent families are
    reported as not evaluated and the active-power converter balance is
    checked instead. SOC schedules are checked in lifted coordinates; the
    cone slack ``W L - |S|^2`` is reported in ``info`` (a nonnegative slack
    is expected from the relaxation, a negative one is counted under
    ``cone``).
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    sol.check_shape(net, grid)
    ev = emit_storage_ac_residuals(net, grid)
    tag = sol.formulation.upper()
    info = {}
    if tag in DC_TAGS:
        fam = ev(sol, voltage=False)
        fams = {}
        for name in FAMILIES:
            fams[name] = {"evaluated": False} if name in VOLTAGE_FAMILIES else _summarize(fam[name])
        fams["active_balance"] = _summarize(fam["active_balance"])
    else:
        lifted = tag in SOC_TAGS
        fam = ev(sol, lifted=lifted)
        fams = {name: _summarize(fr) for name, fr in fam.items()}
        if lifted:
            slack = cone_slack(net, sol)
            fams["cone"] = {"evaluated": True, "max": float(max(0.0, -slack.min())) if slack.size else 0.0,
                            "mean": float(np.mean(np.maximum(0.0, -slack))) if slack.size else 0.0,
                            "count": int(slack.size), "worst": None}
            info["cone_slack_min"] = float(slack.min()) if slack.size else 0.0
            info["cone_slack_max"] = float(slack.max()) if slack.size else 0.0
    feasible = all(f["max"] <= tol for f in fams.values() if f["evaluated"])
    return ViolationReport(tol, fams, feasible, info)


def cone_slack(net: Network, sol: Solution) -> np.ndarray:
    """``W L - |S|^2`` (pu^2) per device, conductor and step."""
    bidx = net.bus_index()
    cidx = net.conductor_index()
    base = net.base_mva
    out = []
    for i, d in enumerate(net.storages):
        for p in d.conductors:
            c = cidx[p]
            w = sol.w[bidx[d.bus], c]
            s2 = (sol.p[i, c] ** 2 + sol.q[i, c] ** 2) / base ** 2
            out.append(w * sol.l[i, c] - s2)
    return np.array(out) if out else np.zeros((0,))


# ---------------------------------------------------------------------------
# forward simulation

@dataclass
class Clip:
    step: int            # 1-based
    kind: str            # "charge", "discharge" or "status"
    commanded: float     # MW
    applied: float       # MW

    @property
    def magnitude(self):
        return self.commanded - self.applied


@dataclass
class Simulation:
    energy: np.ndarray   # MWh after each step
    p_c: np.ndarray      # applied MW
    p_d: np.ndarray
    clips: list

    @property
    def clipped(self):
        return bool(self.clips)


def simulate_buffer(dev: StorageDevice, grid: TimeGrid, p_c, p_d, status=None) -> Simulation:
    """Integrate the buffer forward, clipping power that would leave ``[0, e_max]``.

    Powers are MW, energies MWh. Clipping keeps the step's energy exactly at
    the violated bound and is recorded in ``clips``; overshoots within
    ``1e-9 * max(1, e_max)`` are rounding noise and pass unclipped.
    Off-status steps force both powers to zero.
    """
    p_c = np.asarray(p_c, dtype=float)
    p_d = np.asarray(p_d, dtype=float)
    n = grid.n
    if p_c.shape != (n,) or p_d.shape != (n,):
        raise ValueError(f"schedule length must be {n}")
    status = dev.status if status is None else np.asarray(status, dtype=float)
    e = np.zeros(n)
    ac, ad = np.zeros(n), np.zeros(n)
    clips = []
    e_prev = dev.e_init
    trap = grid.rule == "trapezoid"
    slack = 1e-9 * max(1.0, dev.e_max)
    for k in range(n):
        t = grid.durations[k]
        c, d = max(p_c[k], 0.0), max(p_d[k], 0.0)
        if status[k] == 0 and (c > 0 or d > 0):
            if c > 0:
                clips.append(Clip(k + 1, "status", c, 0.0))
            if d > 0:
                clips.append(Clip(k + 1, "status", d, 0.0))
            c = d = 0.0
        prev = (ac[k - 1], ad[k - 1]) if trap and k > 0 else (None, None)
        w = 0.5 * t if prev[0] is not None else t
        e_new = energy_update(dev, grid.rule, e_prev, c, d, t, *prev)
        if e_new > dev.e_max + slack:
            # reduce charge first, then the step's net intake is what fits
            room = dev.e_max - (e_new - w * dev.eta_c * c)
            c_new = max(0.0, room / (w * dev.eta_c)) if dev.eta_c > 0 else 0.0
            clips.append(Clip(k + 1, "charge", c, c_new))
            c = c_new
            e_new = energy_update(dev, grid.rule, e_prev, c, d, t, *prev)
            e_new = min(e_new, dev.e_max)
        if e_new < -slack:
            avail = e_new + w * d / dev.eta_d
            d_new = max(0.0, avail * dev.eta_d / w)
            clips.append(Clip(k + 1, "discharge", d, d_new))
            d = d_new
            e_new = max(energy_update(dev, grid.rule, e_prev, c, d, t, *prev), 0.0)
        e[k], ac[k], ad[k] = e_new, c, d
        e_prev = e_new
    return Simulation(e, ac, ad, clips)


# ---------------------------------------------------------------------------
# bound ordering

_ALIASES = {"dc-mi": "DC-MI", "soc-mi": "SOC-MI", "relaxed-dc": "DC-RELAXED", "relaxed-soc": "SOC-RELAXED"}


def _value(res, use_bound):
    if isinstance(res, (int, float, np.floating)):
        return float(res)
    v = res.bound if use_bound and res.bound is not None else res.objective
    return float(v)


def bound_report(results: dict, ac_reference: float | None = None, rel_tol: float = 1e-6) -> dict:
    """Check ``DC-MI objective <= SOC-MI bound <= AC reference``.

    ``results`` maps formulation names to :class:`SolveResult` objects or
    plain objective values. Violations beyond ``rel_tol`` (relative) are
    listed under ``violations`` and clear ``ok``.
    """
    if len(results) < 2:
        raise ValueError("bound_report needs at least two formulations")
    norm = {_ALIASES.get(k.lower(), k.upper()): v for k, v in results.items()}
    out = {"values": {}, "violations": [], "ok": True}
    dc = _value(norm["DC-MI"], False) if "DC-MI" in norm else None
    soc = _value(norm["SOC-MI"], True) if "SOC-MI" in norm else None
    for k, v in norm.items():
        out["values"][k] = _value(v, k.startswith("SOC"))

    def flag(lo, hi, what):
        if lo - hi > rel_tol * max(1.0, abs(hi)):
            out["violations"].append(f"{what}: {lo:.10g} > {hi:.10g}")
            out["ok"] = False

    if dc is not None and soc is not None:
        flag(dc, soc, "DC-MI objective exceeds SOC-MI bound")
    if ac_reference is not None:
        out["values"]["AC"] = float(ac_reference)
        if soc is not None:
            flag(soc, ac_reference, "SOC-MI bound exceeds AC-feasible objective")
            out["soc_ac_gap"] = (ac_reference - soc) / ac_reference
    return out


# ---------------------------------------------------------------------------
# AC power flow

@dataclass
class PowerFlow:
    converged: bool
    iterations: int
    vm: np.ndarray       # per bus (network bus order)
    va: np.ndarray
    p_inj: np.ndarray    # net injections, pu
    q_inj: np.ndarray
    branch_sf: np.ndarray  # complex from-end flow, pu
    branch_st: np.ndarray


def admittance(net: Network, conductor):
    """Bus admittance matrix (pu) of one conductor's pi-model branches and shunts."""
    idx = net.bus_index()
    nb = len(net.buses)
    Y = np.zeros((nb, nb), dtype=complex)
    brs = [br for br in net.branches if br.conductor == conductor]
    for br in brs:
        f, t = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b
        Y[f, f] += y + ysh
        Y[t, t] += y + ysh
        Y[f, t] -= y
        Y[t, f] -= y
    for i, b in enumerate(net.buses):
        Y[i, i] += complex(b.gs, b.bs) / net.base_mva
    return Y, brs


def power_flow(net: Network, conductor, p_spec, q_spec, v_set: dict, tol: float = 1e-10,
               max_iter: int = 30) -> PowerFlow:
    """Polar Newton-Raphson power flow for one conductor.

    ``p_spec``/``q_spec`` are net injections (pu) per bus; the reference
    bus is the slack, buses in ``v_set`` (id -> pu magnitude) are PV.
    """
    Y, brs = admittance(net, conductor)
    nb = len(net.buses)
    idx = net.bus_index()
    ref = idx[net.ref_bus]
    pv = sorted(idx[b] for b in v_set if idx[b] != ref)
    pq = [i for i in range(nb) if i != ref and i not in pv]
    vm = np.ones(nb)
    va = np.zeros(nb)
    for b, v in v_set.items():
        vm[idx[b]] = v
    ang = [i for i in range(nb) if i != ref]
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        V = vm * np.exp(1j * va)
        S = V * np.conj(Y @ V)
        mis = np.concatenate([(S.real - p_spec)[ang], (S.imag - q_spec)[pq]])
        if np.max(np.abs(mis)) < tol:
            converged = True
            break
        dS_dva = 1j * np.diag(V) @ np.conj(np.diag(Y @ V) - Y @ np.diag(V))
        dS_dvm = np.diag(V) @ np.conj(Y @ np.diag(V / vm)) + np.diag(V / vm) @ np.conj(np.diag(Y @ V))
        J = np.block([[dS_dva.real[np.ix_(ang, ang)], dS_dvm.real[np.ix_(ang, pq)]],
                      [dS_dva.imag[np.ix_(pq, ang)], dS_dvm.imag[np.ix_(pq, pq)]]])
        dx = np.linalg.solve(J, -mis)
        va[ang] += dx[:len(ang)]
        vm[pq] += dx[len(ang):]
    V = vm * np.exp(1j * va)
    S = V * np.conj(Y @ V)
    sf, st = [], []
    for br in brs:
        f, t = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b
        sf.append(V[f] * np.conj((y + ysh) * V[f] - y * V[t]))
        st.append(V[t] * np.conj((y + ysh) * V[t] - y * V[f]))
    return PowerFlow(converged, it, vm, va, S.real, S.imag, np.array(sf), np.array(st))


def _storage_draw(net, conductor, p_spec, q_spec, vk, p_c, p_d, k):
    """Fixed point of converter draws and bus voltages for one step."""
    base = net.base_mva
    idx = net.bus_index()
    draw = np.zeros(len(net.storages))
    for _ in range(100):
        ps = p_spec.copy()
        for i, d in enumerate(net.storages):
            ps[idx[d.bus]] -= draw[i]
        pf = power_flow(net, conductor, ps, q_spec, vk)
        new = np.zeros_like(draw)
        for i, d in enumerate(net.storages):
            u = pf.vm[idx[d.bus]]
            cq = (p_c[i] - p_d[i]) / base + d.s_ext[k].real / base
            a = d.z(conductor).real / u ** 2
            # smaller root of P = cq + a P^2
            new[i] = cq if a == 0 else (1 - np.sqrt(max(1 - 4 * a * cq, 0.0))) / (2 * a)
        done = np.max(np.abs(new - draw), initial=0.0) < 1e-13
        draw = new
        if done:
            break
    ps = p_spec.copy()
    for i, d in enumerate(net.storages):
        ps[idx[d.bus]] -= draw[i]
    return power_flow(net, conductor, ps, q_spec, vk), draw, ps


def _realize_step(net, conductor, p_spec, q_spec, vk, p_c, p_d, k, max_outer=100):
    """Power flow with generator reactive limits enforced.

    PV buses whose generators hit a reactive limit are pinned at it (PQ
    switching); the slack setpoint is moved by secant steps, within the
    bus voltage bounds, until its generators are inside their range.
    """
    base = net.base_mva
    idx = net.bus_index()
    ref = net.ref_bus
    lim = {}
    for g in net.generators:
        if g.conductor == conductor:
            lo, hi = lim.get(g.bus, (0.0, 0.0))
            lim[g.bus] = (lo + g.q_min, hi + g.q_max)
    vk = dict(vk)
    q_used = q_spec.copy()
    hist = []
    rb = net.bus(ref)
    v_lo, v_hi = rb.u_min.get(conductor, 0.0), rb.u_max.get(conductor, np.inf)
    for _ in range(max_outer):
        pf, draw, ps = _storage_draw(net, conductor, p_spec, q_used, vk, p_c, p_d, k)
        ok = True
        for b in list(vk):
            i = idx[b]
            qg = (pf.q_inj[i] - q_used[i]) * base
            lo, hi = lim.get(b, (0.0, 0.0))
            if lo - 1e-9 <= qg <= hi + 1e-9:
                continue
            target = lo if qg < lo else hi
            if b != ref:
                ok = False
                del vk[b]
                q_used[i] += target / base
                continue
            hist.append((vk[b], qg))
            if len(hist) >= 2 and hist[-1][1] != hist[-2][1]:
                (v0, q0), (v1, q1) = hist[-2], hist[-1]
                v_new = v1 + (target - q1) * (v1 - v0) / (q1 - q0)
            else:
                v_new = vk[b] + (1e-3 if qg < lo else -1e-3)
            v_new = float(np.clip(v_new, v_lo, v_hi))
            if v_new != vk[b]:
                ok = False
                vk[b] = v_new
            else:
                # slack setpoint saturated: move the other PV setpoints instead
                step = -2e-3 if qg < lo else 2e-3
                for o in vk:
                    if o == ref:
                        continue
                    ob = net.bus(o)
                    v_o = float(np.clip(vk[o] + step, ob.u_min.get(conductor, 0.0),
                                        ob.u_max.get(conductor, np.inf)))
                    if v_o != vk[o]:
                        ok = False
                        vk[o] = v_o
                hist.clear()
        if ok:
            break
    return pf, draw, ps, q_used


@dataclass
class ACReference:
    feasible: bool
    cost: float              # secant PWL cost, $ (same objective as the relaxations)
    cost_quadratic: float    # exact quadratic cost, $
    solution: Solution
    report: ViolationReport
    branch_overload: float   # max |S| - rate over branches/steps, MVA (<= 0 when within limits)
    converged: bool


def ac_reference(net: Network, grid: TimeGrid, p_c, p_d, gen_p: dict, v_set: dict,
                 segments: int = 32, tol: float = 1e-6, conductor=None) -> ACReference:
    """Realize a storage schedule and generator setpoints as an AC operating point.

    ``p_c``/``p_d`` are (devices, steps) arrays in MW; ``gen_p`` maps
    non-slack generator ids to per-step MW arrays; ``v_set`` maps PV/slack
    bus ids to voltage setpoints (scalars or per-step arrays). Each storage converter absorbs
    ``P = P_c - P_d + Re(S_ext) + R |I|^2`` at zero grid reactive power (the
    internal reactive source covers ``X |I|^2``); the slack generator closes
    the balance. Feasibility is judged by :func:`check_solution` plus
    generator, branch and voltage limits.
    """
    conductor = conductor or net.conductors[0]
    base = net.base_mva
    n = grid.n
    idx = net.bus_index()
    cidx = net.conductor_index()
    c = cidx[conductor]
    p_c = np.atleast_2d(np.asarray(p_c, dtype=float))
    p_d = np.atleast_2d(np.asarray(p_d, dtype=float))
    sol = Solution.empty(net, grid, "AC-NL")
    overload = -np.inf
    converged = True
    ref_gens = [g for g in net.generators if g.bus == net.ref_bus and g.conductor == conductor]
    for k in range(n):
        p_spec = np.zeros(len(net.buses))
        q_spec = np.zeros(len(net.buses))
        for b in net.buses:
            s = b.demand(conductor, n)[k] / base
            p_spec[idx[b.id]] -= s.real
            q_spec[idx[b.id]] -= s.imag
        for g in net.generators:
            if g.conductor == conductor and g.id in gen_p:
                p_spec[idx[g.bus]] += gen_p[g.id][k] / base
        vk = {b: float(np.broadcast_to(v, (n,))[k]) for b, v in v_set.items()}
        pf, draw, ps, q_used = _realize_step(net, conductor, p_spec, q_spec, vk, p_c[:, k], p_d[:, k], k)
        converged &= pf.converged
        for i, b in enumerate(net.buses):
            sol.vm[i, c, k] = pf.vm[i]
            sol.w[i, c, k] = pf.vm[i] ** 2
        for i, d in enumerate(net.storages):
            u = pf.vm[idx[d.bus]]
            sol.p_c[i, k], sol.p_d[i, k] = p_c[i, k], p_d[i, k]
            sol.p_stor[i, k] = p_d[i, k] - p_c[i, k]
            sol.p[i, c, k] = draw[i] * base
            sol.q[i, c, k] = 0.0
            sol.l[i, c, k] = draw[i] ** 2 / u ** 2
            sol.q_int[i, k] = -d.z(conductor).imag * sol.l[i, c, k] * base + d.s_ext[k].imag
        # generator outputs: fixed ones as given, the slack/PV reactive split by Q range
        gq_need = {b.id: (pf.q_inj[idx[b.id]] - q_spec[idx[b.id]]) * base for b in net.buses}
        del q_used
        gp_need = {b.id: (pf.p_inj[idx[b.id]] - ps[idx[b.id]]) * base for b in net.buses}
        for i, g in enumerate(net.generators):
            if g.conductor != conductor:
                continue
            peers = [h for h in net.generators if h.bus == g.bus and h.conductor == conductor]
            span = sum(h.q_max - h.q_min for h in peers)
            share = (g.q_max - g.q_min) / span if span > 0 else 1.0 / len(peers)
            sol.gen_q[i, k] = gq_need[g.bus] * share
            if g.id in gen_p:
                sol.gen_p[i, k] = gen_p[g.id][k]
            elif g in ref_gens:
                sol.gen_p[i, k] = gp_need[g.bus] / len(ref_gens)
            else:
                sol.gen_p[i, k] = 0.0
        rates = np.array([br.rate for br in net.branches if br.conductor == conductor])
        if rates.size:
            flows = np.maximum(np.abs(pf.branch_sf), np.abs(pf.branch_st)) * base
            overload = max(overload, float(np.max(flows - rates)))
    # the energy trajectory follows from the schedule
    for i, d in enumerate(net.storages):
        sim = simulate_buffer(d, grid, p_c[i], p_d[i])
        sol.e[i] = sim.energy
        if sim.clipped:
            converged = False
    report = check_solution(net, grid, sol, tol)
    cost_pwl = cost_quad = 0.0
    for i, g in enumerate(net.generators):
        T = grid.durations
        cost_pwl += float(np.sum(T * pwl_cost(g, sol.gen_p[i], segments)))
        cost_quad += float(np.sum(T * g.cost_rate(sol.gen_p[i])))
    sol.objective = cost_pwl
    feasible = report.feasible and converged and overload <= tol
    return ACReference(feasible, cost_pwl, cost_quad, sol, report, overload, converged)
