"""Best-bound branch-and-bound with lazy outer-approximation cuts."""

from __future__ import annotations

import heapq
import logging
import time

import numpy as np
import scipy.sparse as sp

from .lp import LinearProgram, solve_linear
from .options import SolveOptions, SolveResult

logger = logging.getLogger(__name__)


def cone_cut(cone, vals):
    """Tangent cut of ``||(2x, u - v)|| <= u + v`` at ``vals``.

    Returns ``(cols, coefs, rhs)`` for ``coefs @ vals[cols] <= rhs`` or
    ``None`` when the gradient is undefined (point at the apex).
    """
    xs = np.array([vals[i] for i in cone.x])
    u, v = cone.sides(vals)
    nrm = np.sqrt(4.0 * xs @ xs + (u - v) ** 2)
    if nrm <= 1e-14:
        return None
    cols = list(cone.x)
    coefs = list(4.0 * xs / nrm)
    rhs = 0.0
    cu = (u - v) / nrm - 1.0
    cv = -(u - v) / nrm - 1.0
    if cone.u is not None:
        cols.append(cone.u)
        coefs.append(cu)
    else:
        rhs -= cu * cone.u_const
    if cone.v is not None:
        cols.append(cone.v)
        coefs.append(cv)
    else:
        rhs -= cv * cone.v_const
    return cols, np.array(coefs), rhs


class CutPool:
    """Globally valid tangent cuts collected for the instance's cones.

    Every cut supports the cone, so dropping stale ones (see :meth:`age`)
    never invalidates a bound; it only allows the cut to be separated again.
    """

    def __init__(self, cones, n_cols):
        self.cones = tuple(cones)
        self.n_cols = n_cols
        self._rows = []
        self._age = []
        self._cached = None

    def __len__(self):
        return len(self._rows)

    def violations(self, x) -> np.ndarray:
        return np.array([c.violation(x) for c in self.cones])

    def max_violation(self, x) -> float:
        if not self.cones:
            return 0.0
        return float(max(0.0, self.violations(x).max()))

    def separate(self, x, tol) -> int:
        added = 0
        for cone, viol in zip(self.cones, self.violations(x)):
            if viol <= tol:
                continue
            cut = cone_cut(cone, x)
            if cut is None:
                continue
            self._rows.append(cut)
            self._age.append(0)
            added += 1
        if added:
            self._cached = None
        return added

    def age(self, x, max_age, slack_tol=1e-9):
        """Age cuts that are slack at ``x``; drop those older than ``max_age``."""
        if max_age is None or not self._rows:
            return 0
        A, rhs = self.matrix()
        slack = rhs - A @ x
        keep = []
        for r, s in enumerate(slack):
            self._age[r] = self._age[r] + 1 if s > slack_tol * max(1.0, abs(rhs[r])) else 0
            keep.append(self._age[r] < max_age)
        dropped = len(keep) - sum(keep)
        if dropped:
            self._rows = [c for c, k in zip(self._rows, keep) if k]
            self._age = [a for a, k in zip(self._age, keep) if k]
            self._cached = None
        return dropped

    def matrix(self):
        if self._cached is None:
            ii, jj, vv = [], [], []
            for r, (cols, coefs, _) in enumerate(self._rows):
                ii.extend([r] * len(cols))
                jj.extend(cols)
                vv.extend(coefs)
            A = sp.csr_matrix((vv, (ii, jj)), shape=(len(self._rows), self.n_cols))
            self._cached = (A, np.array([r[2] for r in self._rows], dtype=float))
        return self._cached

    def cut_rows(self):
        """Cuts as ``(cols, coefs, rhs)`` triples, in creation order."""
        return [(np.asarray(c), np.asarray(v), r) for c, v, r in self._rows]


class _Engine:
    def __init__(self, pi, opts: SolveOptions):
        self.pi = pi
        self.opts = opts
        self.base = LinearProgram.from_instance(pi)
        self.pool = CutPool(pi.cones, pi.n_cols)
        self.binaries = np.asarray(pi.binaries, dtype=int)
        self.res = SolveResult(status="optimal")
        self.t0 = time.perf_counter()
        self.cone_failures = 0

    def log(self, msg):
        self.res.log.append(msg)
        logger.debug(msg)

    def solve_node(self, lb, ub):
        """LP with OA rounds until the cones hold; returns (outcome, violation, converged)."""
        rounds = 0
        while True:
            A_cut, hi_cut = self.pool.matrix()
            lp = LinearProgram(self.base.c, self.base.A, self.base.row_lo, self.base.row_hi, lb, ub, self.base.c0)
            out = solve_linear(lp.stacked(A_cut, hi_cut), self.opts, self.opts.backend)
            self.res.lp_solves += 1
            self.res.iterations += out.iterations
            if out.status != "optimal" or not self.pool.cones:
                return out, 0.0, True
            viol = self.pool.max_violation(out.x)
            if viol <= self.opts.cone_tol:
                return out, viol, True
            if rounds >= self.opts.max_oa_rounds:
                return out, viol, False
            self.pool.age(out.x, self.opts.cut_purge_age)
            added = self.pool.separate(out.x, self.opts.cone_tol)
            rounds += 1
            self.res.oa_rounds += 1
            self.res.cuts += added
            self.log(f"oa round={self.res.oa_rounds} obj={out.objective:.10g} max_viol={viol:.3e} "
                     f"cuts+={added} pool={len(self.pool)}")
            if added == 0:
                return out, viol, False

    def fixed_solve(self, lb, ub, x):
        """Re-solve with every binary fixed at its rounded value in ``x``."""
        lb, ub = lb.copy(), ub.copy()
        vals = np.round(x[self.binaries])
        lb[self.binaries] = vals
        ub[self.binaries] = vals
        return self.solve_node(lb, ub)

    def round_preserving_rows(self, x):
        """Shift fractional binaries to 0/1 where every touched row stays feasible."""
        A = self.pi.A.tocsc()
        lo, hi = self.base.row_lo, self.base.row_hi
        act = self.pi.A @ x
        xr = x.copy()
        tol = self.opts.feas_tol
        for j in self.binaries:
            v = xr[j]
            rows = A.indices[A.indptr[j]:A.indptr[j + 1]]
            coef = A.data[A.indptr[j]:A.indptr[j + 1]]
            for cand in sorted((0.0, 1.0), key=lambda c: (abs(c - v), c)):
                new = act[rows] + coef * (cand - v)
                if np.all(new >= lo[rows] - tol) and np.all(new <= hi[rows] + tol):
                    act[rows] = new
                    xr[j] = cand
                    break
            else:
                return None
        return xr

    def out_of_limits(self):
        if self.opts.node_limit is not None and self.res.nodes >= self.opts.node_limit:
            return "node_limit"
        if self.opts.time_limit is not None and time.perf_counter() - self.t0 >= self.opts.time_limit:
            return "time_limit"
        return None

    def run(self) -> SolveResult:
        opts = self.opts
        res = self.res
        inc_x, inc_obj = None, np.inf
        pruned_min = np.inf
        heap = [(-np.inf, 0, ())]
        seq = 1
        limit = None
        global_bound = -np.inf
        unbounded = False

        def close_enough(bound):
            return inc_x is not None and (inc_obj - bound) / max(1.0, abs(inc_obj)) <= opts.mip_gap

        while heap:
            limit = self.out_of_limits()
            if limit:
                break
            key, _, fix = heapq.heappop(heap)
            global_bound = max(global_bound, min(key, pruned_min))
            res.bound_trajectory.append(global_bound)
            if close_enough(key):
                heapq.heappush(heap, (key, -1, fix))
                break
            res.nodes += 1
            lb = self.base.lb.copy()
            ub = self.base.ub.copy()
            for j, val in fix:
                lb[j] = ub[j] = val
            out, viol, converged = self.solve_node(lb, ub)
            res.max_cone_violation = max(res.max_cone_violation, viol) if out.status == "optimal" else \
                res.max_cone_violation
            if out.status == "infeasible":
                continue
            if out.status == "unbounded":
                unbounded = True
                break
            if out.status != "optimal":
                res.status = "numerical"
                self.log(f"node {res.nodes}: LP status {out.status}: {out.message}")
                continue
            obj, x = out.objective, out.x
            if inc_x is not None and obj >= inc_obj:
                continue
            if close_enough(obj):
                pruned_min = min(pruned_min, obj)
                continue
            if not converged:
                self.cone_failures += 1
            xb = x[self.binaries]
            frac = np.minimum(xb - np.floor(xb), np.ceil(xb) - xb)
            if not np.any(frac > opts.int_tol):
                if converged:
                    if len(self.binaries):
                        out2, viol2, conv2 = self.fixed_solve(lb, ub, x)
                        if out2.status == "optimal" and conv2 and out2.objective < inc_obj:
                            inc_x, inc_obj = out2.x, out2.objective
                    elif obj < inc_obj:
                        inc_x, inc_obj = x, obj
                    self.log(f"node {res.nodes}: integral obj={obj:.10g} incumbent={inc_obj:.10g}")
                else:
                    pruned_min = min(pruned_min, obj)
                continue
            xr = self.round_preserving_rows(x)
            if xr is not None and converged:
                out2, viol2, conv2 = self.fixed_solve(lb, ub, xr)
                if out2.status == "optimal" and conv2 and out2.objective < inc_obj:
                    inc_x, inc_obj = out2.x, out2.objective
                    self.log(f"node {res.nodes}: rounding incumbent={inc_obj:.10g}")
                    if close_enough(obj):
                        pruned_min = min(pruned_min, obj)
                        continue
            # most fractional binary, ties to the lowest column index
            pick = int(np.argmax(frac))
            j = int(self.binaries[pick])
            self.log(f"node {res.nodes}: bound={obj:.10g} branch col={j} value={x[j]:.6f}")
            for val in (0.0, 1.0):
                heapq.heappush(heap, (obj, seq, fix + ((j, val),)))
                seq += 1

        res.runtime = time.perf_counter() - self.t0
        if unbounded:
            res.status = "unbounded"
            return res
        open_min = min((k for k, _, _ in heap), default=np.inf)
        res.bound = float(min(open_min, pruned_min, inc_obj))
        if inc_x is None:
            res.status = limit or ("infeasible" if not heap and self.cone_failures == 0 else "gap_limit")
            if res.status == "infeasible":
                res.bound = np.inf
            return res
        res.x, res.objective = inc_x, inc_obj
        res.finalize()
        if limit:
            res.status = limit
        elif res.status != "numerical":
            res.status = "optimal" if res.gap <= opts.mip_gap and self.cone_failures == 0 else "gap_limit"
        self.log(f"done status={res.status} obj={res.objective:.10g} bound={res.bound:.10g} gap={res.gap:.3e} "
                 f"nodes={res.nodes} cuts={res.cuts}")
        return res


def mip_solve(pi, opts: SolveOptions | None = None) -> SolveResult:
    """Branch-and-bound over the binary columns of ``pi``.

    Nodes are explored best-bound first, branching on the most fractional
    binary. Cone constraints, if any, are enforced at every node through
    outer-approximation cuts shared across the tree.
    """
    return _Engine(pi, opts or SolveOptions()).run()


def oa_loop(pi, opts: SolveOptions | None = None) -> SolveResult:
    """Outer-approximation solve of an instance with rotated-cone constraints.

    The returned bound is the last relaxation objective, a valid lower
    bound on the conic optimum; ``gap_limit`` signals the round limit.
    """
    if not pi.cones:
        raise ValueError("oa_loop expects cone constraints")
    for cone in pi.cones:
        for j in (cone.u, cone.v):
            if j is not None and pi.lb[j] < 0:
                raise ValueError("cone sides must be lower-bounded by 0")
    return mip_solve(pi, opts)


def oa_snapshot(pi, opts: SolveOptions | None = None):
    """Linear outer approximation of a conic instance.

    Runs the cut loop on the continuous relaxation at the root and returns
    ``pi`` with its cones replaced by the collected tangent cuts (rows of
    family ``oa_cut``); binaries are kept. Suitable for LP-format export.
    """
    if not pi.cones:
        return pi
    eng = _Engine(pi.relaxed(), opts or SolveOptions())
    out, viol, _ = eng.solve_node(eng.base.lb.copy(), eng.base.ub.copy())
    if out.status != "optimal":
        raise RuntimeError(f"root relaxation is {out.status}; no snapshot available")
    A, rhs = eng.pool.matrix()
    snap = pi.without_cones()
    if A.shape[0] == 0:
        return snap
    names = [f"oa_cut_{i + 1}" for i in range(A.shape[0])]
    return snap.with_rows(A, ["<="] * A.shape[0], rhs, family="oa_cut", names=names)
