"""Network, storage fleet and time grid types.

User-facing values are in engineering units (h, MW, MVAr, MVA, MWh, pu).
Conversion to per-unit on ``base_mva`` happens when a model is emitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

RULES = ("endpoint", "trapezoid")
TERMINAL_KINDS = ("fixed_init", "terminal_ge_initial", "terminal_fixed")


class ValidationError(ValueError):
    """Raised when a network or time grid violates a parameter condition."""

    def __init__(self, findings):
        self.findings = list(findings)
        super().__init__("; ".join(str(f) for f in self.findings))


def _frozen_array(values, dtype=float):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Ordered step durations in hours plus the integration rule."""

    durations: np.ndarray
    rule: str = "endpoint"

    def __post_init__(self):
        object.__setattr__(self, "durations", _frozen_array(np.atleast_1d(self.durations)))

    @classmethod
    def uniform(cls, dt_hours: float, n: int, rule: str = "endpoint") -> "TimeGrid":
        return cls(np.full(int(n), float(dt_hours)), rule)

    @property
    def n(self) -> int:
        return len(self.durations)

    @property
    def times(self) -> np.ndarray:
        """Start time of every step, in hours from the horizon start."""
        return np.concatenate(([0.0], np.cumsum(self.durations)[:-1]))

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.rule == other.rule and np.array_equal(self.durations, other.durations)

    __hash__ = None


@dataclass(frozen=True)
class TerminalCondition:
    kind: str = "fixed_init"
    value: Optional[float] = None  # MWh, only for terminal_fixed

    def __str__(self):
        if self.kind == "terminal_fixed":
            return f"terminal_fixed({self.value})"
        return self.kind


@dataclass(frozen=True)
class StorageDevice:
    """One converter plus its energy buffer.

    ``s_ext`` holds the exogenous complex power per step (MVA); a positive
    real part is power leaving the converter node (standby loss, sink), a
    negative one is an exogenous source. ``z_phase`` maps conductor to a
    complex per-unit impedance. ``i_rating_phase`` is a per-unit current on
    the system base; ``None`` means no current limit.
    """

    id: str
    bus: str
    status: np.ndarray
    s_ext: np.ndarray
    s_rating_total: float
    eta_c: float
    eta_d: float
    e_init: float
    e_max: float
    p_c_max: float
    p_d_max: float
    z_phase: dict
    conductors: tuple = ("a",)
    s_rating_phase: Optional[dict] = None
    i_rating_phase: Optional[dict] = None
    terminal_condition: TerminalCondition = TerminalCondition()

    def __post_init__(self):
        object.__setattr__(self, "status", _frozen_array(self.status, dtype=float))
        object.__setattr__(self, "s_ext", _frozen_array(self.s_ext, dtype=complex))
        object.__setattr__(self, "conductors", tuple(self.conductors))
        object.__setattr__(self, "z_phase", {p: complex(z) for p, z in self.z_phase.items()})

    def z(self, conductor) -> complex:
        return self.z_phase.get(conductor, 0j)

    def __eq__(self, other):
        if not isinstance(other, StorageDevice):
            return NotImplemented
        return all(_field_equal(getattr(self, f), getattr(other, f)) for f in self.__dataclass_fields__)

    __hash__ = None


@dataclass(frozen=True)
class Bus:
    id: str
    conductors: tuple = ("a",)
    u_min: dict = field(default_factory=dict)
    u_max: dict = field(default_factory=dict)
    # per conductor, per step complex demand (MVA)
    load: dict = field(default_factory=dict)
    gs: float = 0.0  # shunt conductance (MW at 1 pu)
    bs: float = 0.0  # shunt susceptance (MVAr at 1 pu)

    def __post_init__(self):
        object.__setattr__(self, "conductors", tuple(self.conductors))
        object.__setattr__(self, "load", {p: _frozen_array(v, dtype=complex) for p, v in self.load.items()})

    def demand(self, conductor, n: int) -> np.ndarray:
        if conductor not in self.load:
            return np.zeros(n, dtype=complex)
        return self.load[conductor]

    def __eq__(self, other):
        if not isinstance(other, Bus):
            return NotImplemented
        return all(_field_equal(getattr(self, f), getattr(other, f)) for f in self.__dataclass_fields__)

    __hash__ = None


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    p_min: float
    p_max: float
    q_min: float = 0.0
    q_max: float = 0.0
    cost: tuple = (0.0, 0.0, 0.0)  # c2 $/MWh^2, c1 $/MWh, c0 $/h
    conductor: str = "a"

    def __post_init__(self):
        object.__setattr__(self, "cost", tuple(float(c) for c in self.cost))

    def cost_rate(self, p_mw):
        """Quadratic cost in $/h at ``p_mw``."""
        c2, c1, c0 = self.cost
        return c2 * np.square(p_mw) + c1 * np.asarray(p_mw) + c0


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    b: float = 0.0
    rate: float = np.inf  # MVA
    conductor: str = "a"


@dataclass(frozen=True)
class Network:
    base_mva: float
    conductors: tuple
    buses: tuple
    branches: tuple = ()
    generators: tuple = ()
    storages: tuple = ()
    ref_bus: Optional[str] = None

    def __post_init__(self):
        for name in ("conductors", "buses", "branches", "generators", "storages"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.ref_bus is None and self.buses:
            object.__setattr__(self, "ref_bus", self.buses[0].id)

    def bus(self, bus_id) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def bus_index(self) -> dict:
        return {b.id: i for i, b in enumerate(self.buses)}

    def conductor_index(self) -> dict:
        return {p: i for i, p in enumerate(self.conductors)}

    def replace(self, **changes) -> "Network":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return Network(**kw)


def _field_equal(a, b):
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(np.asarray(a), np.asarray(b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_field_equal(a[k], b[k]) for k in a)
    return a == b


@dataclass(frozen=True)
class Finding:
    entity: str
    field: str
    condition: str

    def __str__(self):
        return f"{self.entity}: {self.field} {self.condition}"


def per_phase_rating(dev: StorageDevice, conductors: Sequence) -> dict:
    """Apparent power rating per conductor (MVA).

    Explicit per-phase ratings are returned unchanged but must sum to the
    total rating; otherwise the total is split evenly.
    """
    conductors = list(conductors)
    if dev.s_rating_total < 0:
        raise ValueError(f"{dev.id}: s_rating_total must be >= 0")
    if dev.s_rating_phase is not None:
        total = sum(dev.s_rating_phase.values())
        if abs(total - dev.s_rating_total) > 1e-9 * max(abs(dev.s_rating_total), 1e-300):
            raise ValueError(
                f"{dev.id}: per-phase ratings sum to {total}, expected {dev.s_rating_total}"
            )
        return dict(dev.s_rating_phase)
    return {p: dev.s_rating_total / len(conductors) for p in conductors}


def validate_network(net: Network, grid: TimeGrid) -> list:
    """Check every parameter condition; return a list of :class:`Finding`."""
    out = []

    def bad(entity, fld, cond):
        out.append(Finding(entity, fld, cond))

    if grid.rule not in RULES:
        bad("time", "rule", f"must be one of {RULES}")
    if grid.n < 1:
        bad("time", "n", "must be >= 1")
    if np.any(~(grid.durations > 0)):
        bad("time", "durations", "must be > 0")
    if not net.base_mva > 0:
        bad("network", "base_mva", "must be > 0")

    conds = set(net.conductors)
    bus_ids = [b.id for b in net.buses]
    if len(set(bus_ids)) != len(bus_ids):
        bad("network", "buses", "ids must be unique")
    buses = set(bus_ids)
    if net.ref_bus is not None and net.ref_bus not in buses:
        bad("network", "ref_bus", "must reference an existing bus")

    for b in net.buses:
        ent = f"bus {b.id}"
        if not set(b.conductors) <= conds:
            bad(ent, "conductors", "must be a subset of the network conductors")
        for p in b.conductors:
            lo, hi = b.u_min.get(p, 0.0), b.u_max.get(p, np.inf)
            if not lo >= 0:
                bad(ent, "u_min", "must be >= 0")
            if not hi >= lo:
                bad(ent, "u_max", "must be >= u_min")
        for p, series in b.load.items():
            if p not in b.conductors:
                bad(ent, "load", f"conductor {p} not connected at this bus")
            if series.shape != (grid.n,):
                bad(ent, "load", f"must have {grid.n} steps")

    for g in net.generators:
        ent = f"generator {g.id}"
        if g.bus not in buses:
            bad(ent, "bus", "must reference an existing bus")
        if g.conductor not in conds:
            bad(ent, "conductor", "must be a network conductor")
        if not g.p_min <= g.p_max:
            bad(ent, "p_min", "must be <= p_max")
        if not g.q_min <= g.q_max:
            bad(ent, "q_min", "must be <= q_max")
        if not g.cost[0] >= 0:
            bad(ent, "cost", "c2 must be >= 0")

    for br in net.branches:
        ent = f"branch {br.id}"
        for end in ("from_bus", "to_bus"):
            if getattr(br, end) not in buses:
                bad(ent, end, "must reference an existing bus")
        if br.conductor not in conds:
            bad(ent, "conductor", "must be a network conductor")
        if br.x == 0:
            bad(ent, "x", "must be != 0")
        if not br.rate >= 0:
            bad(ent, "rate", "must be >= 0")

    for d in net.storages:
        ent = f"storage {d.id}"
        if d.bus not in buses:
            bad(ent, "bus", "must reference an existing bus")
        elif not set(d.conductors) <= set(net.bus(d.bus).conductors):
            bad(ent, "conductors", "must be connected at the device bus")
        if not set(d.conductors) <= conds:
            bad(ent, "conductors", "must be a subset of the network conductors")
        if d.status.shape != (grid.n,):
            bad(ent, "status", f"must have {grid.n} steps")
        elif not np.all(np.isin(d.status, (0.0, 1.0))):
            bad(ent, "status", "must be in {0,1}")
        if d.s_ext.shape != (grid.n,):
            bad(ent, "s_ext", f"must have {grid.n} steps")
        for name in ("s_rating_total", "e_init", "e_max", "p_c_max", "p_d_max"):
            if not getattr(d, name) >= 0:
                bad(ent, name, "must be >= 0")
        if not d.eta_d > 0:
            bad(ent, "eta_d", "must be > 0")
        if not d.eta_d <= 1:
            bad(ent, "eta_d", "must be <= 1")
        if not d.eta_c >= 0:
            bad(ent, "eta_c", "must be >= 0")
        if not d.eta_c <= 1:
            bad(ent, "eta_c", "must be <= 1")
        if d.e_init > d.e_max:
            bad(ent, "e_init", "exceeds e_max")
        if d.s_rating_phase is not None:
            if set(d.s_rating_phase) != set(d.conductors):
                bad(ent, "s_rating_phase", "must give one value per device conductor")
            elif any(not v >= 0 for v in d.s_rating_phase.values()):
                bad(ent, "s_rating_phase", "must be >= 0")
            else:
                try:
                    per_phase_rating(d, d.conductors)
                except ValueError:
                    bad(ent, "s_rating_phase", "must sum to s_rating_total")
        if d.i_rating_phase is not None:
            if any(not v >= 0 for v in d.i_rating_phase.values()):
                bad(ent, "i_rating_phase", "must be >= 0")
        tc = d.terminal_condition
        if tc.kind not in TERMINAL_KINDS:
            bad(ent, "terminal_condition", f"must be one of {TERMINAL_KINDS}")
        elif tc.kind == "terminal_fixed":
            if tc.value is None or not 0 <= tc.value <= d.e_max:
                bad(ent, "terminal_condition", "terminal_fixed value must lie in [0, e_max]")
    return out
