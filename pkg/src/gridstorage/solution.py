"""Dispatch schedules in engineering units."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .datamodel import Network, TimeGrid
from .formulation import bus, gen, stor

_DEVICE_STEP = ("p_c", "p_d", "e", "z", "q_int", "p_stor")
_DEVICE_COND_STEP = ("p", "q", "l")
_BUS_COND_STEP = ("w", "vm")
_GEN_STEP = ("gen_p", "gen_q")


@dataclass
class Solution:
    """Per device/bus/generator arrays; NaN marks a quantity the model lacks.

    Powers in MW/MVAr, energy in MWh, ``l`` and ``w`` in pu^2, ``vm`` in pu.
    Device/conductor arrays are indexed by the network conductor order.
    """

    formulation: str
    storage_ids: tuple
    bus_ids: tuple
    gen_ids: tuple
    conductors: tuple
    p_c: np.ndarray
    p_d: np.ndarray
    e: np.ndarray
    z: np.ndarray
    q_int: np.ndarray
    p_stor: np.ndarray
    p: np.ndarray
    q: np.ndarray
    l: np.ndarray
    w: np.ndarray
    vm: np.ndarray
    gen_p: np.ndarray
    gen_q: np.ndarray
    objective: float = float("nan")
    bound: float = float("nan")
    gap: float = float("nan")
    status: str = ""
    meta: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, net: Network, grid: TimeGrid, formulation: str = "") -> "Solution":
        nd, nb, ng, nc, n = len(net.storages), len(net.buses), len(net.generators), len(net.conductors), grid.n

        def nan(*shape):
            return np.full(shape, np.nan)

        return cls(formulation, tuple(d.id for d in net.storages), tuple(b.id for b in net.buses),
                   tuple(g.id for g in net.generators), tuple(net.conductors),
                   nan(nd, n), nan(nd, n), nan(nd, n), nan(nd, n), nan(nd, n), nan(nd, n),
                   nan(nd, nc, n), nan(nd, nc, n), nan(nd, nc, n), nan(nb, nc, n), nan(nb, nc, n),
                   nan(ng, n), nan(ng, n))

    @property
    def n(self) -> int:
        return self.p_c.shape[1] if self.p_c.ndim == 2 and self.p_c.shape[0] else self.gen_p.shape[-1]

    def check_shape(self, net: Network, grid: TimeGrid):
        nd, nb, ng, nc, n = len(net.storages), len(net.buses), len(net.generators), len(net.conductors), grid.n
        want = {**{f: (nd, n) for f in _DEVICE_STEP}, **{f: (nd, nc, n) for f in _DEVICE_COND_STEP},
                **{f: (nb, nc, n) for f in _BUS_COND_STEP}, **{f: (ng, n) for f in _GEN_STEP}}
        for name, shape in want.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"solution field {name} has shape {got}, expected {shape}")

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        def enc(a):
            return np.where(np.isnan(a), None, a).tolist() if np.asarray(a).size else np.asarray(a).tolist()

        def num(v):
            return None if v is None or not np.isfinite(v) else float(v)

        out = {
            "formulation": self.formulation,
            "status": self.status,
            "objective": num(self.objective),
            "bound": num(self.bound),
            "gap": num(self.gap),
            "storage_ids": list(self.storage_ids),
            "bus_ids": list(self.bus_ids),
            "gen_ids": list(self.gen_ids),
            "conductors": list(self.conductors),
            "meta": self.meta,
        }
        for name in _DEVICE_STEP + _DEVICE_COND_STEP + _BUS_COND_STEP + _GEN_STEP:
            out[name] = enc(getattr(self, name))
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Solution":
        nd, nb, ng, nc = len(d["storage_ids"]), len(d["bus_ids"]), len(d["gen_ids"]), len(d["conductors"])

        def dec(name, lead):
            a = np.array(d[name], dtype=float) if d[name] else np.zeros(lead + (0,))
            return a.reshape(lead + (-1,)) if a.size else np.zeros(lead + (0,))

        def num(v):
            return float("nan") if v is None else float(v)

        arrays = {}
        for name in _DEVICE_STEP:
            arrays[name] = dec(name, (nd,))
        for name in _DEVICE_COND_STEP:
            arrays[name] = dec(name, (nd, nc))
        for name in _BUS_COND_STEP:
            arrays[name] = dec(name, (nb, nc))
        for name in _GEN_STEP:
            arrays[name] = dec(name, (ng,))
        return cls(d["formulation"], tuple(d["storage_ids"]), tuple(d["bus_ids"]), tuple(d["gen_ids"]),
                   tuple(d["conductors"]), **arrays, objective=num(d.get("objective")),
                   bound=num(d.get("bound")), gap=num(d.get("gap")), status=d.get("status", ""),
                   meta=d.get("meta", {}))

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "Solution":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            with open(text) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))

    def dispatch_csv(self, grid: TimeGrid) -> str:
        """One row per device and step, columns suited to external plotting."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["step", "time_h", "device", "p_charge_mw", "p_discharge_mw", "energy_mwh"]
        for p in self.conductors:
            header += [f"p_{p}_mw", f"q_{p}_mvar"]
        w.writerow(header)
        times = grid.times
        for i, dev in enumerate(self.storage_ids):
            for k in range(grid.n):
                row = [k + 1, _fmt(times[k]), dev, _fmt(self.p_c[i, k]), _fmt(self.p_d[i, k]), _fmt(self.e[i, k])]
                for c in range(len(self.conductors)):
                    row += [_fmt(self.p[i, c, k]), _fmt(self.q[i, c, k])]
                w.writerow(row)
        return buf.getvalue()


def _fmt(v):
    return "" if np.isnan(v) else repr(float(v))


def decode(pi, x, net: Network, grid: TimeGrid) -> Solution:
    """Map column values of ``pi`` back to a :class:`Solution`."""
    sol = Solution.empty(net, grid, pi.tag)
    idx = pi.index()
    base = net.base_mva
    cidx = net.conductor_index()

    def get(key, scale=1.0):
        j = idx.get(key)
        return np.nan if j is None else x[j] * scale

    for i, d in enumerate(net.storages):
        ent = stor(d.id)
        for k in range(grid.n):
            sol.p_c[i, k] = get((ent, "pc", None, k), base)
            sol.p_d[i, k] = get((ent, "pd", None, k), base)
            sol.e[i, k] = get((ent, "e", None, k), base)
            sol.z[i, k] = get((ent, "z", None, k))
            sol.q_int[i, k] = get((ent, "qint", None, k), base)
            sol.p_stor[i, k] = get((ent, "pstor", None, k), base)
            for p in net.conductors:
                c = cidx[p]
                if p in d.conductors:
                    sol.p[i, c, k] = get((ent, "p", p, k), base)
                    sol.q[i, c, k] = get((ent, "q", p, k), base)
                    sol.l[i, c, k] = get((ent, "l", p, k))
                else:
                    sol.p[i, c, k] = sol.q[i, c, k] = sol.l[i, c, k] = 0.0
    for i, b in enumerate(net.buses):
        for p in b.conductors:
            for k in range(grid.n):
                sol.w[i, cidx[p], k] = get((bus(b.id), "w", p, k))
    for i, g in enumerate(net.generators):
        for k in range(grid.n):
            sol.gen_p[i, k] = get((gen(g.id), "p", g.conductor, k), base)
            sol.gen_q[i, k] = get((gen(g.id), "q", g.conductor, k), base)
    return sol
