"""Explicit variable index space, sparse rows and rotated cones."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

SENSES = ("<=", ">=", "==")


@dataclass(frozen=True)
class ConeConstraint:
    """``sum(x_i**2) <= u * v`` with ``u, v >= 0``.

    ``u``/``v`` are column indices, or ``None`` to use the constants
    ``u_const``/``v_const`` (a norm ball when both are constant).
    """

    x: tuple
    u: Optional[int] = None
    v: Optional[int] = None
    u_const: float = 0.0
    v_const: float = 0.0
    family: str = ""

    def sides(self, vals):
        u = vals[self.u] if self.u is not None else self.u_const
        v = vals[self.v] if self.v is not None else self.v_const
        return u, v

    def violation(self, vals) -> float:
        """``sum(x^2) - u*v``; positive means the point lies outside."""
        xs = np.asarray([vals[i] for i in self.x])
        u, v = self.sides(vals)
        return float(xs @ xs - u * v)


@dataclass(frozen=True)
class ProblemInstance:
    """One formulation over an explicit column space.

    Rows read ``A[i] @ x (sense[i]) rhs[i]``. ``keys[j]`` is the
    ``(entity, role, conductor, step)`` tuple of column ``j``.
    """

    tag: str
    keys: tuple
    lb: np.ndarray
    ub: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    row_names: tuple
    row_family: tuple
    c: np.ndarray
    c0: float = 0.0
    cones: tuple = ()
    binaries: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    meta: dict = field(default_factory=dict)

    @property
    def n_cols(self) -> int:
        return len(self.keys)

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def index(self) -> dict:
        return {k: j for j, k in enumerate(self.keys)}

    def col(self, key) -> int:
        return self.index()[key]

    def names(self) -> list:
        return [column_name(k) for k in self.keys]

    def row_bounds(self):
        """Rows as ``lo <= A x <= hi``."""
        lo = np.where(self.sense == "<=", -np.inf, self.rhs)
        hi = np.where(self.sense == ">=", np.inf, self.rhs)
        return lo, hi

    def rows_in(self, family) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.row_family) == family)

    def objective(self, x) -> float:
        return float(self.c @ x + self.c0)

    def row_violation(self, x) -> np.ndarray:
        act = self.A @ x
        lo, hi = self.row_bounds()
        return np.maximum(np.maximum(lo - act, act - hi), 0.0)

    def with_bounds(self, lb=None, ub=None) -> "ProblemInstance":
        return _replace(self, lb=self.lb if lb is None else _ro(lb), ub=self.ub if ub is None else _ro(ub))

    def relaxed(self) -> "ProblemInstance":
        """Same instance with integrality dropped."""
        return _replace(self, binaries=_ro(np.zeros(0, dtype=int)))

    def without_cones(self) -> "ProblemInstance":
        return _replace(self, cones=())

    def with_rows(self, A_new, sense_new, rhs_new, family="cut", names=None) -> "ProblemInstance":
        A_new = sp.csr_matrix(A_new, shape=(A_new.shape[0], self.n_cols))
        k = A_new.shape[0]
        names = names or [f"{family}_{self.n_rows + i}" for i in range(k)]
        return _replace(
            self,
            A=sp.vstack([self.A, A_new], format="csr"),
            sense=_ro(np.concatenate([self.sense, np.asarray(sense_new, dtype=self.sense.dtype)])),
            rhs=_ro(np.concatenate([self.rhs, np.asarray(rhs_new, dtype=float)])),
            row_names=self.row_names + tuple(names),
            row_family=self.row_family + (family,) * k,
        )


def _ro(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


def _replace(pi, **changes):
    kw = {f: getattr(pi, f) for f in pi.__dataclass_fields__}
    kw.update(changes)
    return ProblemInstance(**kw)


_NAME_BAD = re.compile(r"[^A-Za-z0-9_.]")


def column_name(key) -> str:
    """LP-safe column name encoding ``(entity, role, conductor, step)``."""
    entity, role, cond, step = key
    parts = [_NAME_BAD.sub(".", str(entity)), _NAME_BAD.sub(".", str(role)),
             "." if cond is None else _NAME_BAD.sub(".", str(cond)), "." if step is None else str(step + 1)]
    return "_".join(parts)


class ModelBuilder:
    """Incrementally collect columns, rows and cones, then :meth:`build`."""

    def __init__(self, tag: str):
        self.tag = tag
        self._index = {}
        self._keys = []
        self._lb = []
        self._ub = []
        self._cost = []
        self._binary = []
        self._rows_i = []
        self._rows_j = []
        self._rows_v = []
        self._sense = []
        self._rhs = []
        self._row_names = []
        self._row_family = []
        self.cones = []
        self.c0 = 0.0
        self.meta = {}

    # columns -----------------------------------------------------------
    def var(self, key, lb=-np.inf, ub=np.inf, cost=0.0, binary=False) -> int:
        """Create column ``key``; re-requesting an existing key returns it."""
        j = self._index.get(key)
        if j is not None:
            return j
        j = len(self._keys)
        self._index[key] = j
        self._keys.append(key)
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._cost.append(float(cost))
        self._binary.append(bool(binary))
        return j

    def col(self, key) -> int:
        return self._index[key]

    def has(self, key) -> bool:
        return key in self._index

    def add_cost(self, j, value):
        self._cost[j] += float(value)

    def set_binary(self, j, flag=True):
        self._binary[j] = flag

    @property
    def n_cols(self):
        return len(self._keys)

    @property
    def n_rows(self):
        return len(self._sense)

    # rows ----------------------------------------------------------------
    def row(self, terms, sense, rhs, name, family):
        """Add ``sum(coef * x[col]) (sense) rhs``; ``terms`` is an iterable of (col, coef)."""
        if sense not in SENSES:
            raise ValueError(f"bad sense {sense!r}")
        i = len(self._sense)
        for j, v in terms:
            if v != 0.0:
                self._rows_i.append(i)
                self._rows_j.append(j)
                self._rows_v.append(float(v))
        self._sense.append(sense)
        self._rhs.append(float(rhs))
        self._row_names.append(name)
        self._row_family.append(family)
        return i

    def cone(self, x, u=None, v=None, u_const=0.0, v_const=0.0, family=""):
        for side, j in (("u", u), ("v", v)):
            if j is not None and self._lb[j] < 0:
                raise ValueError(f"cone {side}-column {self._keys[j]} must be lower-bounded by 0")
        self.cones.append(ConeConstraint(tuple(x), u, v, float(u_const), float(v_const), family))

    def build(self) -> ProblemInstance:
        n, m = len(self._keys), len(self._sense)
        A = sp.csr_matrix((self._rows_v, (self._rows_i, self._rows_j)), shape=(m, n))
        A.sum_duplicates()
        return ProblemInstance(
            tag=self.tag,
            keys=tuple(self._keys),
            lb=_ro(np.array(self._lb, dtype=float)),
            ub=_ro(np.array(self._ub, dtype=float)),
            A=A,
            sense=_ro(np.array(self._sense, dtype="<U2")),
            rhs=_ro(np.array(self._rhs, dtype=float)),
            row_names=tuple(self._row_names),
            row_family=tuple(self._row_family),
            c=_ro(np.array(self._cost, dtype=float)),
            c0=float(self.c0),
            cones=tuple(self.cones),
            binaries=_ro(np.flatnonzero(self._binary).astype(int)),
            meta=dict(self.meta),
        )
