"""Case files, load profiles, the three-phase replicate and instance export."""

from __future__ import annotations

import csv
import json
import math
import os
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .datamodel import (
    Branch, Bus, Generator, Network, StorageDevice, TerminalCondition, TimeGrid, ValidationError,
    validate_network,
)
from .problem import ProblemInstance

THREE_PHASE = ("a", "b", "c")
DEFAULT_SPLITS = (0.36, 0.33, 0.31)


class CaseError(ValueError):
    """Schema violation in a case document; ``path`` locates the offending value."""

    def __init__(self, path, msg):
        self.path = path
        super().__init__(f"{path}: {msg}")


# ---------------------------------------------------------------------------
# load profiles

@dataclass(frozen=True)
class LoadProfile:
    multipliers: np.ndarray
    hours: np.ndarray = None

    def __post_init__(self):
        m = np.array(self.multipliers, dtype=float)
        if np.any(m < 0):
            raise ValueError("profile multipliers must be >= 0")
        m.setflags(write=False)
        object.__setattr__(self, "multipliers", m)
        h = np.arange(len(m), dtype=float) if self.hours is None else np.array(self.hours, dtype=float)
        h.setflags(write=False)
        object.__setattr__(self, "hours", h)

    def __len__(self):
        return len(self.multipliers)


def read_profile_csv(path) -> LoadProfile:
    """Read a ``hour,multiplier`` CSV."""
    hours, mult = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["hour", "multiplier"]:
            raise CaseError(str(path), "profile CSV needs the header 'hour,multiplier'")
        for row in reader:
            hours.append(float(row["hour"]))
            mult.append(float(row["multiplier"]))
    return LoadProfile(np.array(mult), np.array(hours))


def interpolate_profile(p: LoadProfile, factor: int) -> LoadProfile:
    """Insert ``factor - 1`` linearly interpolated points between neighbours.

    Original samples are kept bit-for-bit; output length is
    ``(len - 1) * factor + 1``.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"interpolation factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    m, h = p.multipliers, p.hours
    if factor == 1 or len(m) < 2:
        return p
    frac = np.arange(factor) / factor
    body = (m[:-1, None] + (m[1:] - m[:-1])[:, None] * frac[None, :]).ravel()
    hb = (h[:-1, None] + (h[1:] - h[:-1])[:, None] * frac[None, :]).ravel()
    # position 0 of every segment reproduces the original sample exactly
    body[::factor] = m[:-1]
    hb[::factor] = h[:-1]
    return LoadProfile(np.append(body, m[-1]), np.append(hb, h[-1]))


def profile_series(spec, n: int, root: str = ".", path: str = "profiles") -> np.ndarray:
    """Resolve a profile definition to exactly ``n`` multipliers.

    ``cyclic`` appends the first sample before interpolating so that a
    24-point daily shape at factor 4 yields 96 quarter-hour steps.
    """
    if "multipliers" in spec:
        prof = LoadProfile(np.asarray(spec["multipliers"], dtype=float))
    elif "csv" in spec:
        prof = read_profile_csv(os.path.join(root, spec["csv"]))
    else:
        raise CaseError(path, "profile needs 'multipliers' or 'csv'")
    if spec.get("cyclic", False):
        step = prof.hours[1] - prof.hours[0] if len(prof) > 1 else 1.0
        prof = LoadProfile(np.append(prof.multipliers, prof.multipliers[0]),
                           np.append(prof.hours, prof.hours[-1] + step))
    prof = interpolate_profile(prof, spec.get("interp_factor", 1))
    if len(prof) < n:
        raise CaseError(path, f"profile yields {len(prof)} values, need {n}")
    return np.array(prof.multipliers[:n])


# ---------------------------------------------------------------------------
# case parsing

def _req(d, key, path):
    if not isinstance(d, dict):
        raise CaseError(path, "expected an object")
    if key not in d:
        raise CaseError(f"{path}.{key}", "missing required field")
    return d[key]


def _num(v, path, allow_inf=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        if allow_inf and v in ("inf", "Infinity"):
            return math.inf
        raise CaseError(path, f"expected a number, got {v!r}")
    return float(v)


def _series(v, n, path, cast=float):
    if isinstance(v, list):
        if len(v) != n:
            raise CaseError(path, f"expected {n} values, got {len(v)}")
        return np.array([cast(_num(x, f"{path}[{i}]")) for i, x in enumerate(v)])
    return np.full(n, cast(_num(v, path)))


def _complex_series(v, n, path):
    if isinstance(v, dict):
        re_ = _series(v.get("re", 0.0), n, f"{path}.re")
        im_ = _series(v.get("im", 0.0), n, f"{path}.im")
        return re_ + 1j * im_
    if isinstance(v, list):
        if len(v) != n:
            raise CaseError(path, f"expected {n} values, got {len(v)}")
        out = np.zeros(n, dtype=complex)
        for i, x in enumerate(v):
            if isinstance(x, dict):
                out[i] = complex(_num(x.get("re", 0.0), f"{path}[{i}].re"), _num(x.get("im", 0.0), f"{path}[{i}].im"))
            else:
                out[i] = _num(x, f"{path}[{i}]")
        return out
    return np.full(n, complex(_num(v, path)))


def _per_conductor(v, conductors, path, default=None):
    if v is None:
        return default
    if isinstance(v, dict):
        unknown = set(v) - set(conductors)
        if unknown:
            raise CaseError(path, f"unknown conductors {sorted(unknown)}")
        return {p: _num(v[p], f"{path}.{p}", allow_inf=True) for p in v}
    return {p: _num(v, path, allow_inf=True) for p in conductors}


def _impedance(v, conductors, path):
    def one(x, pth):
        if isinstance(x, dict) and ("r" in x or "x" in x):
            return complex(_num(x.get("r", 0.0), f"{pth}.r"), _num(x.get("x", 0.0), f"{pth}.x"))
        if isinstance(x, list) and len(x) == 2:
            return complex(_num(x[0], f"{pth}[0]"), _num(x[1], f"{pth}[1]"))
        if isinstance(x, (int, float)) and not isinstance(x, bool):
            return complex(x)
        raise CaseError(pth, "impedance must be {r, x}, [r, x] or a number")

    if v is None:
        return {p: 0j for p in conductors}
    if isinstance(v, dict) and set(v) <= set(conductors) and v and not ("r" in v or "x" in v):
        return {p: one(v[p], f"{path}.{p}") for p in v}
    z = one(v, path)
    return {p: z for p in conductors}


def _terminal(v, path):
    if v is None or v == "fixed_init":
        return TerminalCondition()
    if v == "terminal_ge_initial":
        return TerminalCondition("terminal_ge_initial")
    if isinstance(v, dict) and "terminal_fixed" in v:
        return TerminalCondition("terminal_fixed", _num(v["terminal_fixed"], f"{path}.terminal_fixed"))
    raise CaseError(path, f"unknown terminal condition {v!r}")


def _time(doc):
    t = _req(doc, "time", "$")
    rule = t.get("rule", "endpoint") if isinstance(t, dict) else "endpoint"
    if isinstance(t, list):
        return TimeGrid([_num(x, f"$.time[{i}]") for i, x in enumerate(t)], rule)
    if "durations" in t:
        d = t["durations"]
        if not isinstance(d, list):
            raise CaseError("$.time.durations", "expected an array")
        return TimeGrid([_num(x, f"$.time.durations[{i}]") for i, x in enumerate(d)], rule)
    dt = _num(_req(t, "dt_hours", "$.time"), "$.time.dt_hours")
    n = _req(t, "n", "$.time")
    if not isinstance(n, int) or isinstance(n, bool):
        raise CaseError("$.time.n", "expected an integer")
    return TimeGrid.uniform(dt, n, rule)


def parse_case(doc, root: str = ".", rule: str | None = None, interp_factor: int | None = None):
    """Parse a case document (JSON text or already-decoded dict) into ``(Network, TimeGrid)``.

    ``rule`` overrides the discretization rule; ``interp_factor`` overrides
    every profile's interpolation factor. Raises :class:`CaseError` for
    schema problems and :class:`ValidationError` listing every violated
    parameter condition.
    """
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise CaseError("$", f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise CaseError("$", "expected an object")
    grid = _time(doc)
    if rule is not None:
        grid = TimeGrid(grid.durations, rule)
    n = grid.n
    base = _num(_req(doc, "base_mva", "$"), "$.base_mva")
    conductors = tuple(str(p) for p in doc.get("conductors", ["a"]))

    profiles = {}
    for name, spec in (doc.get("profiles") or {}).items():
        spec = dict(spec)
        if interp_factor is not None:
            spec["interp_factor"] = interp_factor
        profiles[name] = profile_series(spec, n, root, f"$.profiles.{name}")
    default_profile = doc.get("default_profile")
    if default_profile is not None and default_profile not in profiles:
        raise CaseError("$.default_profile", f"unknown profile {default_profile!r}")

    loads = {}
    for i, ld in enumerate(doc.get("loads", [])):
        path = f"$.loads[{i}]"
        b = str(_req(ld, "bus", path))
        p = str(ld.get("conductor", conductors[0]))
        prof_name = ld.get("profile", default_profile)
        pv, qv = ld.get("p_mw", 0.0), ld.get("q_mvar", 0.0)
        if isinstance(pv, list) or isinstance(qv, list):
            s = _series(pv, n, f"{path}.p_mw") + 1j * _series(qv, n, f"{path}.q_mvar")
        else:
            s = complex(_num(pv, f"{path}.p_mw"), _num(qv, f"{path}.q_mvar")) * np.ones(n)
            if prof_name is not None:
                if prof_name not in profiles:
                    raise CaseError(f"{path}.profile", f"unknown profile {prof_name!r}")
                s = s * profiles[prof_name]
        key = (b, p)
        loads[key] = loads.get(key, 0) + s

    buses = []
    for i, bd in enumerate(_req(doc, "buses", "$")):
        path = f"$.buses[{i}]"
        bid = str(_req(bd, "id", path))
        bc = tuple(str(p) for p in bd.get("conductors", conductors))
        buses.append(Bus(
            id=bid, conductors=bc,
            u_min=_per_conductor(bd.get("u_min", 0.0), bc, f"{path}.u_min"),
            u_max=_per_conductor(bd.get("u_max", "inf"), bc, f"{path}.u_max"),
            load={p: s for (b, p), s in loads.items() if b == bid},
            gs=_num(bd.get("gs", 0.0), f"{path}.gs"), bs=_num(bd.get("bs", 0.0), f"{path}.bs"),
        ))
    bus_ids = {b.id for b in buses}
    for (b, p) in loads:
        if b not in bus_ids:
            raise CaseError("$.loads", f"load references unknown bus {b!r}")

    branches = []
    for i, bd in enumerate(doc.get("branches", [])):
        path = f"$.branches[{i}]"
        branches.append(Branch(
            id=str(_req(bd, "id", path)), from_bus=str(_req(bd, "from_bus", path)),
            to_bus=str(_req(bd, "to_bus", path)), r=_num(bd.get("r", 0.0), f"{path}.r"),
            x=_num(_req(bd, "x", path), f"{path}.x"), b=_num(bd.get("b", 0.0), f"{path}.b"),
            rate=_num(bd.get("rate_mva", "inf"), f"{path}.rate_mva", allow_inf=True),
            conductor=str(bd.get("conductor", conductors[0])),
        ))

    gens = []
    for i, gd in enumerate(doc.get("generators", [])):
        path = f"$.generators[{i}]"
        cost = gd.get("cost", [0.0, 0.0, 0.0])
        if not isinstance(cost, list) or len(cost) != 3:
            raise CaseError(f"{path}.cost", "expected [c2, c1, c0]")
        gens.append(Generator(
            id=str(_req(gd, "id", path)), bus=str(_req(gd, "bus", path)),
            p_min=_num(gd.get("p_min", 0.0), f"{path}.p_min"), p_max=_num(_req(gd, "p_max", path), f"{path}.p_max"),
            q_min=_num(gd.get("q_min", 0.0), f"{path}.q_min"), q_max=_num(gd.get("q_max", 0.0), f"{path}.q_max"),
            cost=tuple(_num(c, f"{path}.cost[{j}]") for j, c in enumerate(cost)),
            conductor=str(gd.get("conductor", conductors[0])),
        ))

    storages = []
    for i, sd in enumerate(doc.get("storages", [])):
        path = f"$.storages[{i}]"
        sc = tuple(str(p) for p in sd.get("conductors", conductors))
        srp = sd.get("s_rating_phase")
        storages.append(StorageDevice(
            id=str(_req(sd, "id", path)), bus=str(_req(sd, "bus", path)),
            status=_series(sd.get("status", 1), n, f"{path}.status"),
            s_ext=_complex_series(sd.get("s_ext", 0.0), n, f"{path}.s_ext"),
            s_rating_total=_num(_req(sd, "s_rating_total", path), f"{path}.s_rating_total"),
            eta_c=_num(_req(sd, "eta_c", path), f"{path}.eta_c"),
            eta_d=_num(_req(sd, "eta_d", path), f"{path}.eta_d"),
            e_init=_num(_req(sd, "e_init", path), f"{path}.e_init"),
            e_max=_num(_req(sd, "e_max", path), f"{path}.e_max"),
            p_c_max=_num(_req(sd, "p_c_max", path), f"{path}.p_c_max"),
            p_d_max=_num(_req(sd, "p_d_max", path), f"{path}.p_d_max"),
            z_phase=_impedance(sd.get("z_phase"), sc, f"{path}.z_phase"),
            conductors=sc,
            s_rating_phase=None if srp is None else _per_conductor(srp, sc, f"{path}.s_rating_phase"),
            i_rating_phase=_per_conductor(sd.get("i_rating_phase"), sc, f"{path}.i_rating_phase"),
            terminal_condition=_terminal(sd.get("terminal_condition"), f"{path}.terminal_condition"),
        ))

    ref = doc.get("ref_bus")
    net = Network(base, conductors, buses, branches, gens, storages, None if ref is None else str(ref))
    findings = validate_network(net, grid)
    if findings:
        raise ValidationError(findings)
    return net, grid


def load_case(path, **kw):
    """Parse a case file; relative profile paths resolve against its directory."""
    with open(path) as fh:
        text = fh.read()
    return parse_case(text, root=os.path.dirname(os.path.abspath(path)), **kw)


def _jnum(v):
    return v if np.isfinite(v) else "inf"


def dump_case(net: Network, grid: TimeGrid) -> dict:
    """Canonical case document with every series written out explicitly."""
    loads = []
    for b in net.buses:
        for p, s in b.load.items():
            loads.append({"bus": b.id, "conductor": p, "p_mw": s.real.tolist(), "q_mvar": s.imag.tolist()})
    storages = []
    for d in net.storages:
        tc = d.terminal_condition
        storages.append({
            "id": d.id, "bus": d.bus, "conductors": list(d.conductors),
            "status": d.status.tolist(),
            "s_ext": {"re": d.s_ext.real.tolist(), "im": d.s_ext.imag.tolist()},
            "s_rating_total": d.s_rating_total,
            "s_rating_phase": None if d.s_rating_phase is None else dict(d.s_rating_phase),
            "i_rating_phase": None if d.i_rating_phase is None else {k: _jnum(v) for k, v in d.i_rating_phase.items()},
            "eta_c": d.eta_c, "eta_d": d.eta_d, "e_init": d.e_init, "e_max": d.e_max,
            "p_c_max": d.p_c_max, "p_d_max": d.p_d_max,
            "z_phase": {p: {"r": z.real, "x": z.imag} for p, z in d.z_phase.items()},
            "terminal_condition": {"terminal_fixed": tc.value} if tc.kind == "terminal_fixed" else tc.kind,
        })
    return {
        "base_mva": net.base_mva,
        "conductors": list(net.conductors),
        "ref_bus": net.ref_bus,
        "time": {"durations": grid.durations.tolist(), "rule": grid.rule},
        "buses": [{"id": b.id, "conductors": list(b.conductors),
                   "u_min": {p: _jnum(v) for p, v in b.u_min.items()},
                   "u_max": {p: _jnum(v) for p, v in b.u_max.items()}, "gs": b.gs, "bs": b.bs} for b in net.buses],
        "loads": loads,
        "branches": [{"id": br.id, "from_bus": br.from_bus, "to_bus": br.to_bus, "r": br.r, "x": br.x, "b": br.b,
                      "rate_mva": _jnum(br.rate), "conductor": br.conductor} for br in net.branches],
        "generators": [{"id": g.id, "bus": g.bus, "conductor": g.conductor, "p_min": g.p_min, "p_max": g.p_max,
                        "q_min": g.q_min, "q_max": g.q_max, "cost": list(g.cost)} for g in net.generators],
        "storages": storages,
    }


def save_case(net: Network, grid: TimeGrid, path):
    with open(path, "w") as fh:
        json.dump(dump_case(net, grid), fh, indent=1)


# ---------------------------------------------------------------------------
# network transformations

def make_three_phase(net: Network, splits: Sequence[float] = DEFAULT_SPLITS) -> Network:
    """Replicate a single-conductor network once per phase.

    Every phase copy carries one third of each generator, branch and shunt
    (impedances tripled, ratings, limits and the quadratic cost rescaled) so
    a balanced split reproduces the single-phase system exactly. Loads are
    split by ``splits``. Storage devices connect to all three phases with a
    single shared buffer, per-phase rating ``total / 3`` and per-phase
    impedance ``3 Z``.
    """
    splits = tuple(float(s) for s in splits)
    if len(splits) != 3:
        raise ValueError("need exactly three phase splits")
    if abs(sum(splits) - 1.0) > 1e-9:
        raise ValueError(f"phase splits must sum to 1, got {sum(splits)}")
    if len(net.conductors) != 1:
        raise ValueError("make_three_phase expects a single-conductor network")
    (src,) = net.conductors
    phases = THREE_PHASE
    buses = []
    for b in net.buses:
        buses.append(Bus(
            id=b.id, conductors=phases,
            u_min={p: b.u_min.get(src, 0.0) for p in phases},
            u_max={p: b.u_max.get(src, np.inf) for p in phases},
            load={p: b.load[src] * f for p, f in zip(phases, splits)} if src in b.load else {},
            gs=b.gs / 3.0, bs=b.bs / 3.0,
        ))
    branches = [Branch(f"{br.id}_{p}", br.from_bus, br.to_bus, 3 * br.r, 3 * br.x, br.b / 3.0, br.rate / 3.0, p)
                for br in net.branches for p in phases]
    gens = []
    for g in net.generators:
        c2, c1, c0 = g.cost
        for p in phases:
            gens.append(Generator(f"{g.id}_{p}", g.bus, g.p_min / 3, g.p_max / 3, g.q_min / 3, g.q_max / 3,
                                  (3 * c2, c1, c0 / 3), p))
    storages = []
    for d in net.storages:
        z = d.z(src)
        i_rating = None
        if d.i_rating_phase is not None and src in d.i_rating_phase:
            i_rating = {p: d.i_rating_phase[src] / 3.0 for p in phases}
        storages.append(StorageDevice(
            id=d.id, bus=d.bus, status=d.status, s_ext=d.s_ext, s_rating_total=d.s_rating_total,
            eta_c=d.eta_c, eta_d=d.eta_d, e_init=d.e_init, e_max=d.e_max, p_c_max=d.p_c_max, p_d_max=d.p_d_max,
            z_phase={p: 3 * z for p in phases}, conductors=phases,
            s_rating_phase={p: d.s_rating_total / 3.0 for p in phases},
            i_rating_phase=i_rating, terminal_condition=d.terminal_condition,
        ))
    return Network(net.base_mva, phases, buses, branches, gens, storages, net.ref_bus)


def without_storage(net: Network) -> Network:
    return net.replace(storages=())


# ---------------------------------------------------------------------------
# instance export

def _fmt(v):
    return repr(float(v))


def _expr(names, cols, coefs):
    parts = []
    for j, v in zip(cols, coefs):
        sign = "-" if v < 0 else "+"
        parts.append(f"{sign} {_fmt(abs(v))} {names[j]}")
    lines, cur = [], ""
    for p in parts:
        if len(cur) + len(p) > 200:
            lines.append(cur)
            cur = ""
        cur += (" " if cur else "") + p
    lines.append(cur)
    return "\n   ".join(lines)


def export_lp(pi: ProblemInstance, path=None) -> str:
    """Write ``pi`` in LP text format; cones must be linearized first."""
    if pi.cones:
        raise ValueError("instance still holds cone constraints; take an outer-approximation snapshot first")
    names = pi.names()
    if len(set(names)) != len(names):
        raise ValueError("column names are not unique")
    out = [f"\\ {pi.tag}", "Minimize"]
    nz = np.flatnonzero(pi.c)
    obj = _expr(names, nz, pi.c[nz]) if nz.size else ""
    if pi.c0 != 0.0:
        obj = (obj + " " if obj else "") + (f"+ {_fmt(pi.c0)}" if pi.c0 > 0 else f"- {_fmt(-pi.c0)}")
    out.append(f" obj: {obj if obj else '0 ' + names[0]}")
    out.append("Subject To")
    A = pi.A.tocsr()
    ops = {"<=": "<=", ">=": ">=", "==": "="}
    used = set()
    for i in range(pi.n_rows):
        rn = re.sub(r"[^A-Za-z0-9_.]", ".", pi.row_names[i]) or f"r{i}"
        if rn in used:
            rn = f"{rn}.{i}"
        used.add(rn)
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        vals = A.data[A.indptr[i]:A.indptr[i + 1]]
        body = _expr(names, cols, vals) if len(cols) else f"0 {names[0]}"
        out.append(f" {rn}: {body} {ops[pi.sense[i]]} {_fmt(pi.rhs[i])}")
    out.append("Bounds")
    for j, nm in enumerate(names):
        lo, hi = pi.lb[j], pi.ub[j]
        if lo == hi:
            out.append(f" {nm} = {_fmt(lo)}")
        elif np.isinf(lo) and np.isinf(hi):
            out.append(f" {nm} free")
        else:
            los = "-inf" if np.isinf(lo) else _fmt(lo)
            his = "+inf" if np.isinf(hi) else _fmt(hi)
            out.append(f" {los} <= {nm} <= {his}")
    if len(pi.binaries):
        out.append("Binary")
        out.extend(f" {names[j]}" for j in pi.binaries)
    out.append("End")
    text = "\n".join(out) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


_TERM = re.compile(r"([+-])?\s*((?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|inf)?\s*([A-Za-z_][A-Za-z0-9_.]*)?")


def _parse_terms(text):
    """Parse ``+ 2 x - 3.5 y + 4`` into ({name: coef}, constant)."""
    terms, const = {}, 0.0
    pos, text = 0, text.strip()
    while pos < len(text):
        m = _TERM.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse LP expression near {text[pos:pos + 30]!r}")
        sign = -1.0 if m.group(1) == "-" else 1.0
        num = float(m.group(2)) if m.group(2) else None
        name = m.group(3)
        if name is None:
            if num is None:
                raise ValueError(f"dangling sign in LP expression near {text[pos:pos + 30]!r}")
            const += sign * num
        else:
            terms[name] = terms.get(name, 0.0) + sign * (1.0 if num is None else num)
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return terms, const


def read_lp(path_or_text) -> ProblemInstance:
    """Minimal reader for the subset of LP format written by :func:`export_lp`."""
    text = str(path_or_text)
    if "\n" not in text:
        with open(text) as fh:
            text = fh.read()
    lines = text.splitlines()
    tag = lines[0][1:].strip() if lines and lines[0].startswith("\\") else "LP"
    sections = {"minimize": [], "subject to": [], "bounds": [], "binary": []}
    cur = None
    for raw in lines:
        line = raw.split("\\", 1)[0].rstrip()
        key = line.strip().lower()
        if key in sections:
            cur = key
            continue
        if key == "end":
            break
        if cur is None or not key:
            continue
        if raw.startswith("   ") and sections[cur]:
            sections[cur][-1] += " " + line.strip()
        else:
            sections[cur].append(line.strip())

    obj_line = " ".join(sections["minimize"])
    obj_body = obj_line.split(":", 1)[1] if ":" in obj_line else obj_line
    obj_terms, c0 = _parse_terms(obj_body)
    names, index = [], {}

    def col(nm):
        if nm not in index:
            index[nm] = len(names)
            names.append(nm)
        return index[nm]

    # Bounds lists every column in index order, so it fixes the numbering
    bounds = {}
    for line in sections["bounds"]:
        parts = line.split()
        if len(parts) == 2 and parts[1].lower() == "free":
            nm, lohi = parts[0], (-np.inf, np.inf)
        elif len(parts) == 3 and parts[1] == "=":
            nm, lohi = parts[0], (float(parts[2]), float(parts[2]))
        elif len(parts) == 5:
            nm, lohi = parts[2], (float(parts[0]), float(parts[4]))
        else:
            raise ValueError(f"unsupported bound line {line!r}")
        bounds[nm] = lohi
        col(nm)
    for nm in obj_terms:
        col(nm)
    rows = []
    for line in sections["subject to"]:
        rname, body = line.split(":", 1)
        m = re.search(r"(<=|>=|=)\s*(\S+)\s*$", body)
        sense = {"<=": "<=", ">=": ">=", "=": "=="}[m.group(1)]
        terms, const = _parse_terms(body[:m.start()])
        for nm in terms:
            col(nm)
        rows.append((rname.strip(), terms, sense, float(m.group(2)) - const))
    binaries = []
    for line in sections["binary"]:
        for nm in line.split():
            binaries.append(col(nm))
    n = len(names)
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    for nm, (lo, hi) in bounds.items():
        lb[index[nm]], ub[index[nm]] = lo, hi
    c = np.zeros(n)
    for nm, v in obj_terms.items():
        c[index[nm]] = v
    ii, jj, vv = [], [], []
    for i, (_, terms, _, _) in enumerate(rows):
        for nm, v in terms.items():
            ii.append(i)
            jj.append(index[nm])
            vv.append(v)
    A = sp.csr_matrix((vv, (ii, jj)), shape=(len(rows), n))
    keys = tuple(_key_from_name(nm) for nm in names)
    ro = lambda a: (a.setflags(write=False), a)[1]  # noqa: E731
    return ProblemInstance(
        tag=tag, keys=keys, lb=ro(lb), ub=ro(ub), A=A, sense=ro(np.array([r[2] for r in rows], dtype="<U2")),
        rhs=ro(np.array([r[3] for r in rows], dtype=float)), row_names=tuple(r[0] for r in rows),
        row_family=tuple("lp" for _ in rows), c=ro(c), c0=c0, binaries=ro(np.array(sorted(binaries), dtype=int)),
    )


def _key_from_name(name):
    parts = name.rsplit("_", 3)
    if len(parts) != 4:
        return (name, "", None, None)
    ent, role, cond, step = parts
    return (ent, role, None if cond == "." else cond, None if step == "." else int(step) - 1)


def instance_to_dict(pi: ProblemInstance) -> dict:
    """JSON-ready description of an instance, cones included."""
    names = pi.names()
    A = pi.A.tocsr()

    def num(v):
        return v if np.isfinite(v) else ("inf" if v > 0 else "-inf")

    binset = set(int(j) for j in pi.binaries)
    return {
        "tag": pi.tag,
        "objective_constant": pi.c0,
        "columns": [{"name": nm, "key": [str(k) if k is not None else None for k in key],
                     "lb": num(pi.lb[j]), "ub": num(pi.ub[j]), "cost": float(pi.c[j]), "binary": j in binset}
                    for j, (nm, key) in enumerate(zip(names, pi.keys))],
        "rows": [{"name": pi.row_names[i], "family": pi.row_family[i], "sense": str(pi.sense[i]),
                  "rhs": float(pi.rhs[i]),
                  "terms": [[names[j], float(v)] for j, v in zip(A.indices[A.indptr[i]:A.indptr[i + 1]],
                                                                 A.data[A.indptr[i]:A.indptr[i + 1]])]}
                 for i in range(pi.n_rows)],
        "cones": [{"family": c.family, "x": [names[j] for j in c.x],
                   "u": None if c.u is None else names[c.u], "v": None if c.v is None else names[c.v],
                   "u_const": c.u_const, "v_const": c.v_const} for c in pi.cones],
        "meta": {k: v for k, v in pi.meta.items() if isinstance(v, (int, float, str, bool))},
    }


def export_json(pi: ProblemInstance, path=None) -> str:
    text = json.dumps(instance_to_dict(pi), indent=1)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# bundled data

def data_path(name: str) -> str:
    """Absolute path of a file shipped in ``gridstorage/data``."""
    from importlib import resources

    return str(resources.files("gridstorage").joinpath("data", name))


def load_bundled(name: str = "bess_14bus.json", **kw):
    return load_case(data_path(name), **kw)


def technology_device(tech: str, id: str, bus: str, n: int, s_ext=None, conductors=("a",)) -> StorageDevice:
    """Storage device with one of the illustrative BESS/PHS/Flywheel parameter sets.

    ``s_ext`` overrides the exogenous flow (e.g. a reservoir inflow series
    for PHS, entered as a negative sink).
    """
    with open(data_path("technologies.json")) as fh:
        table = json.load(fh)
    if tech not in table:
        raise KeyError(f"unknown technology {tech!r}; choose from {sorted(table)}")
    t = table[tech]
    ext = _complex_series(t["s_ext"] if s_ext is None else (list(np.real(s_ext)) if np.ndim(s_ext) else s_ext),
                          n, "s_ext")
    if s_ext is not None and np.iscomplexobj(s_ext):
        ext = np.broadcast_to(np.asarray(s_ext, dtype=complex), (n,)).copy()
    return StorageDevice(
        id=id, bus=bus, status=np.full(n, float(t["status"])), s_ext=ext, s_rating_total=t["s_rating_total"],
        eta_c=t["eta_c"], eta_d=t["eta_d"], e_init=t["e_init"], e_max=t["e_max"], p_c_max=t["p_c_max"],
        p_d_max=t["p_d_max"], z_phase=_impedance(t["z_phase"], conductors, "z_phase"), conductors=tuple(conductors),
    )
