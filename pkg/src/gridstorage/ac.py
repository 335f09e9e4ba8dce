"""Nonlinear storage model: residual evaluation and a portable description.

The AC variants are not solved in-repo. They exist as a residual system
used by the verifier and as a JSON description for external NLP/MINLP
solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import Network, TimeGrid, ValidationError, per_phase_rating, validate_network
from .discretize import energy_dynamics

FAMILIES = ("complex_balance", "apparent_limit", "current_limit", "complementarity", "energy", "bounds", "voltage")
VOLTAGE_FAMILIES = ("complex_balance", "apparent_limit", "current_limit", "voltage")


def copper_loss(z, s, u):
    """Converter loss ``Z |I|^2`` with ``|I|^2 = |S|^2 / |U|^2`` (consistent units)."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("voltage magnitude must be > 0")
    return np.asarray(z) * np.abs(np.asarray(s)) ** 2 / u ** 2


@dataclass
class FamilyResiduals:
    """Nonnegative violation magnitudes of one constraint family."""

    name: str
    values: list = field(default_factory=list)
    where: list = field(default_factory=list)   # (entity, conductor, step) with 0-based steps

    def add(self, value, entity, conductor=None, step=None):
        if np.isnan(value):
            return
        self.values.append(float(abs(value)))
        self.where.append((entity, conductor, step))

    @property
    def max(self):
        return max(self.values) if self.values else 0.0

    @property
    def mean(self):
        return float(np.mean(self.values)) if self.values else 0.0

    @property
    def worst(self):
        if not self.values:
            return None
        return self.where[int(np.argmax(self.values))]


def _over(v, lo, hi):
    """Distance of ``v`` outside ``[lo, hi]``; NaN passes through."""
    return max(0.0, lo - v, v - hi) if not np.isnan(v) else np.nan


class StorageResidualEvaluator:
    """Residuals of the full storage model for a :class:`~gridstorage.solution.Solution`.

    Voltages come from ``sol.vm`` (nonlinear point) or, with ``lifted=True``,
    from ``sqrt(sol.w)`` together with the lifted currents ``sol.l``. In the
    nonlinear case currents are implied by ``|I|^2 = |S|^2 / |U|^2`` unless
    ``sol.l`` holds them, in which case the relation is checked as well
    (family ``power_current``).

    Units: powers MW/MVAr/MVA, energy MWh, products MW^2, voltage and
    current in per-unit.
    """

    def __init__(self, net: Network, grid: TimeGrid):
        self.net = net
        self.grid = grid

    def _voltage(self, sol, i_bus, c, k, lifted):
        if lifted:
            w = sol.w[i_bus, c, k]
            return np.sqrt(w) if np.isfinite(w) and w >= 0 else np.nan
        return sol.vm[i_bus, c, k]

    def __call__(self, sol, lifted: bool = False, voltage: bool = True) -> dict:
        net, grid = self.net, self.grid
        sol.check_shape(net, grid)
        base = net.base_mva
        bidx = net.bus_index()
        cidx = net.conductor_index()
        fam = {name: FamilyResiduals(name) for name in FAMILIES}
        if not voltage:
            fam["active_balance"] = FamilyResiduals("active_balance")
        if voltage and not lifted and sol.l.size and np.any(np.isfinite(sol.l)):
            fam["power_current"] = FamilyResiduals("power_current")
        n = grid.n

        if voltage:
            for d in net.storages:
                ib = bidx[d.bus]
                for p in d.conductors:
                    u = np.array([self._voltage(sol, ib, cidx[p], k, lifted) for k in range(n)])
                    if np.any(~np.isfinite(u)):
                        raise ValueError(f"missing voltage data at bus {d.bus} conductor {p}")

        for i, d in enumerate(net.storages):
            ent = f"storage {d.id}"
            rating = per_phase_rating(d, d.conductors)
            ib = bidx[d.bus]
            for k in range(n):
                s = d.status[k]
                pc, pd, e = sol.p_c[i, k], sol.p_d[i, k], sol.e[i, k]
                pstor = pd - pc
                qint = sol.q_int[i, k]
                loss = 0j
                flows = 0j
                for p in d.conductors:
                    c = cidx[p]
                    sp_ = complex(sol.p[i, c, k], 0.0 if np.isnan(sol.q[i, c, k]) else sol.q[i, c, k])
                    fam["bounds"].add(_over(sol.p[i, c, k], -s * rating[p], s * rating[p]), ent, p, k)
                    fam["bounds"].add(_over(sol.q[i, c, k], -s * rating[p], s * rating[p]), ent, p, k)
                    if not voltage:
                        continue
                    u = self._voltage(sol, ib, c, k, lifted)
                    if lifted or np.isfinite(sol.l[i, c, k]):
                        l_pu = sol.l[i, c, k]
                    else:
                        l_pu = abs(sp_ / base) ** 2 / u ** 2
                    if "power_current" in fam:
                        fam["power_current"].add(abs(sp_ / base) ** 2 - u ** 2 * l_pu, ent, p, k)
                    loss += d.z(p) * l_pu * base
                    flows += sp_
                    fam["apparent_limit"].add(max(0.0, abs(sp_) - s * rating[p]), ent, p, k)
                    if d.i_rating_phase is not None and p in d.i_rating_phase:
                        fam["current_limit"].add(max(0.0, np.sqrt(max(l_pu, 0.0)) - s * d.i_rating_phase[p]),
                                                 ent, p, k)
                if voltage:
                    q_term = 0.0 if np.isnan(qint) else qint
                    res = flows + pstor - 1j * q_term - d.s_ext[k] - loss
                    fam["complex_balance"].add(abs(res), ent, None, k)
                else:
                    act = sum(sol.p[i, cidx[p], k] for p in d.conductors) + pstor - d.s_ext[k].real
                    fam["active_balance"].add(act, ent, None, k)
                fam["complementarity"].add(pc * pd, ent, None, k)
                fam["bounds"].add(_over(pc, 0.0, d.p_c_max), ent, None, k)
                fam["bounds"].add(_over(pd, 0.0, d.p_d_max), ent, None, k)
                fam["bounds"].add(_over(e, 0.0, d.e_max), ent, None, k)
                fam["bounds"].add(_over(pstor, -d.s_rating_total, d.s_rating_total), ent, None, k)
                fam["bounds"].add(_over(qint, -s * d.s_rating_total, s * d.s_rating_total), ent, None, k)
                if np.isfinite(sol.p_stor[i, k]):
                    fam["bounds"].add(sol.p_stor[i, k] - pstor, ent, None, k)

            dyn = energy_dynamics(d, grid)
            for k in range(n):
                prev = dyn.rhs[0] if k == 0 else sol.e[i, k - 1]
                inc = dyn.charge[k, 0] * sol.p_c[i, k] + dyn.discharge[k, 0] * sol.p_d[i, k]
                if k > 0:
                    inc += dyn.charge[k, 1] * sol.p_c[i, k - 1] + dyn.discharge[k, 1] * sol.p_d[i, k - 1]
                fam["energy"].add(sol.e[i, k] - prev - inc, ent, None, k)
            tc = d.terminal_condition
            if tc.kind == "terminal_ge_initial":
                fam["energy"].add(max(0.0, d.e_init - sol.e[i, n - 1]), ent, None, n - 1)
            elif tc.kind == "terminal_fixed":
                fam["energy"].add(sol.e[i, n - 1] - tc.value, ent, None, n - 1)

        for i, g in enumerate(net.generators):
            for k in range(n):
                fam["bounds"].add(_over(sol.gen_p[i, k], g.p_min, g.p_max), f"generator {g.id}", g.conductor, k)
                if voltage:
                    fam["bounds"].add(_over(sol.gen_q[i, k], g.q_min, g.q_max), f"generator {g.id}", g.conductor, k)

        if voltage:
            for i, b in enumerate(net.buses):
                for p in b.conductors:
                    for k in range(n):
                        u = self._voltage(sol, i, cidx[p], k, lifted)
                        fam["voltage"].add(_over(u, b.u_min.get(p, 0.0), b.u_max.get(p, np.inf)),
                                           f"bus {b.id}", p, k)
        return fam


def emit_storage_ac_residuals(net: Network, grid: TimeGrid) -> StorageResidualEvaluator:
    """Residual evaluator of the nonlinear storage model on a validated network."""
    findings = validate_network(net, grid)
    if findings:
        raise ValidationError(findings)
    return StorageResidualEvaluator(net, grid)


def ac_model_description(net: Network, grid: TimeGrid, mode: str = "nl") -> dict:
    """Portable description of the AC-NL (``nl``) or AC-MI (``mi``) storage model.

    The document carries the case data plus symbolic constraint templates
    indexed by device ``c``, conductor ``p`` and step ``k``; an external
    modelling layer instantiates them over the listed index sets.
    """
    from .ingest import dump_case

    if mode not in ("nl", "mi"):
        raise ValueError("mode must be 'nl' or 'mi'")
    findings = validate_network(net, grid)
    if findings:
        raise ValidationError(findings)
    comp = ("Pc[c,k] <= Pc_max[c] * z[c,k]", "Pd[c,k] <= Pd_max[c] * (1 - z[c,k])", "z[c,k] in {0,1}") \
        if mode == "mi" else ("Pc[c,k] * Pd[c,k] == 0",)
    dyn = ("E[c,k] - E[c,k-1] == T[k] * (eta_c[c] * Pc[c,k] - Pd[c,k] / eta_d[c])"
           if grid.rule == "endpoint" else
           "E[c,k] - E[c,k-1] == T[k]/2 * ((eta_c[c]*Pc[c,k] - Pd[c,k]/eta_d[c]) "
           "+ (eta_c[c]*Pc[c,k-1] - Pd[c,k-1]/eta_d[c]))")
    return {
        "tag": "AC-MI" if mode == "mi" else "AC-NL",
        "units": {"power": "MW/MVAr/MVA", "energy": "MWh", "impedance": "pu", "voltage": "pu", "current": "pu"},
        "case": dump_case(net, grid),
        "index_sets": {
            "c": [d.id for d in net.storages],
            "p": {d.id: list(d.conductors) for d in net.storages},
            "k": list(range(1, grid.n + 1)),
        },
        "variables": {
            "P[c,p,k]": "[-s[c,k]*S_rating[c,p], s[c,k]*S_rating[c,p]]",
            "Q[c,p,k]": "[-s[c,k]*S_rating[c,p], s[c,k]*S_rating[c,p]]",
            "I[c,p,k]": "complex converter current",
            "U[i,p,k]": "complex bus voltage, |U| in [U_min, U_max]",
            "Pstor[c,k]": "[-S_rating_total[c], S_rating_total[c]]",
            "Pc[c,k]": "[0, Pc_max[c]]",
            "Pd[c,k]": "[0, Pd_max[c]]",
            "Qint[c,k]": "[-S_rating_total[c], S_rating_total[c]]",
            "E[c,k]": "[0, E_max[c]]",
            **({"z[c,k]": "{0,1}"} if mode == "mi" else {}),
        },
        "constraints": {
            "power_definition": "P[c,p,k] + j Q[c,p,k] == U[bus(c),p,k] * conj(I[c,p,k])",
            "balance": "sum_p (P[c,p,k] + j Q[c,p,k]) + Pstor[c,k] == j Qint[c,k] + S_ext[c,k] "
                       "+ sum_p Z[c,p] * |I[c,p,k]|^2 * base_mva",
            "apparent_limit": "P[c,p,k]^2 + Q[c,p,k]^2 <= (s[c,k] * S_rating[c,p])^2",
            "current_limit": "|I[c,p,k]| <= s[c,k] * I_rating[c,p]",
            "split": "Pstor[c,k] == Pd[c,k] - Pc[c,k]",
            "complementarity": list(comp),
            "energy": dyn,
            "initial": "E[c,0] == E_init[c]",
            "terminal": {d.id: d.terminal_condition.kind for d in net.storages},
            "voltage": "U_min[i,p] <= |U[i,p,k]| <= U_max[i,p]",
            "nodal_balance": "storage P/Q enter each bus/conductor balance with sign -1, generation with +1",
        },
        "objective": "sum_k T[k] * sum_g (c2[g] * Pg[g,k]^2 + c1[g] * Pg[g,k] + c0[g])",
    }
