"""Linear programming backends.

``highs`` goes through :func:`scipy.optimize.linprog` (dual simplex).
``simplex`` is the in-repo sparse revised bounded-variable primal simplex
with Dantzig pricing, a Bland fallback on stalling and row/column
equilibration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.linalg import splu

from .options import SolveOptions, SolveResult


@dataclass
class LinearProgram:
    """``min c x + c0`` s.t. ``row_lo <= A x <= row_hi``, ``lb <= x <= ub``."""

    c: np.ndarray
    A: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    c0: float = 0.0

    @classmethod
    def from_instance(cls, pi, lb=None, ub=None):
        lo, hi = pi.row_bounds()
        return cls(np.asarray(pi.c, float), sp.csr_matrix(pi.A), lo, hi,
                   np.array(pi.lb if lb is None else lb, float), np.array(pi.ub if ub is None else ub, float), pi.c0)

    def stacked(self, A_extra, hi_extra):
        if A_extra is None or A_extra.shape[0] == 0:
            return self
        k = A_extra.shape[0]
        return LinearProgram(self.c, sp.vstack([self.A, A_extra], format="csr"),
                             np.concatenate([self.row_lo, np.full(k, -np.inf)]),
                             np.concatenate([self.row_hi, hi_extra]), self.lb, self.ub, self.c0)


@dataclass
class LPOutcome:
    status: str
    x: np.ndarray | None
    objective: float
    iterations: int
    message: str = ""


def solve_linear(lp: LinearProgram, opts: SolveOptions, backend: str = "highs") -> LPOutcome:
    if np.any(lp.lb > lp.ub + opts.feas_tol):
        return LPOutcome("infeasible", None, np.inf, 0, "crossed column bounds")
    if backend == "highs":
        return _solve_highs(lp, opts)
    if backend == "simplex":
        return BoundedSimplex(lp, opts).solve()
    raise ValueError(f"unknown LP backend {backend!r}")


def _solve_highs(lp: LinearProgram, opts: SolveOptions) -> LPOutcome:
    lo, hi, A = lp.row_lo, lp.row_hi, lp.A
    eq = np.isfinite(lo) & np.isfinite(hi) & (np.abs(hi - lo) <= 0.0)
    upper = ~eq & np.isfinite(hi)
    lower = ~eq & np.isfinite(lo)
    A_ub = sp.vstack([A[np.flatnonzero(upper)], -A[np.flatnonzero(lower)]], format="csr")
    b_ub = np.concatenate([hi[upper], -lo[lower]])
    kwargs = {}
    if A_ub.shape[0]:
        kwargs.update(A_ub=A_ub, b_ub=b_ub)
    if eq.any():
        kwargs.update(A_eq=A[np.flatnonzero(eq)], b_eq=lo[eq])
    bounds = np.column_stack([np.where(np.isfinite(lp.lb), lp.lb, -np.inf),
                              np.where(np.isfinite(lp.ub), lp.ub, np.inf)])
    options = {
        "primal_feasibility_tolerance": opts.feas_tol,
        "dual_feasibility_tolerance": min(opts.feas_tol, 1e-7),
        "presolve": True,
    }
    if opts.time_limit is not None:
        options["time_limit"] = float(opts.time_limit)
    res = linprog(lp.c, bounds=bounds, method="highs-ds", options=options, **kwargs)
    status = {0: "optimal", 1: "time_limit", 2: "infeasible", 3: "unbounded"}.get(res.status, "numerical")
    if status != "optimal":
        return LPOutcome(status, None, np.inf if status == "infeasible" else -np.inf, int(res.nit or 0), res.message)
    return LPOutcome("optimal", np.asarray(res.x), float(res.fun) + lp.c0, int(res.nit or 0), res.message)


class BoundedSimplex:
    """Two-phase revised primal simplex on ``[A, -I] [x; r] = 0`` with bounded columns.

    Row activities ``r`` carry the row bounds, so every row starts with a
    basic slack. Rows whose slack would start out of bounds get an
    artificial column; phase one drives those to zero. The basis is held as
    a sparse LU factorization plus product-form eta updates and is
    refactorized every ``refactor_every`` pivots. Pricing is Dantzig with a
    Bland fallback after ``stall_limit`` degenerate pivots; the ratio test
    is a two-pass Harris test that prefers large pivots.
    """

    stall_limit = 50
    refactor_every = 64
    pivot_tol = 1e-9

    def __init__(self, lp: LinearProgram, opts: SolveOptions):
        self.opts = opts
        A = sp.csr_matrix(lp.A, dtype=float) if lp.A is not None else sp.csr_matrix((0, len(lp.c)))
        m, n = A.shape
        # equilibrate rows, then columns, to unit max-norm
        rs = np.ones(m)
        cs = np.ones(n)
        if m and n and A.nnz:
            rmax = abs(A).max(axis=1).toarray().ravel()
            rs = np.where(rmax > 0, 1.0 / np.where(rmax > 0, rmax, 1.0), 1.0)
            A = sp.diags(rs) @ A
            cmax = abs(A).max(axis=0).toarray().ravel()
            cs = np.where(cmax > 0, 1.0 / np.where(cmax > 0, cmax, 1.0), 1.0)
            A = A @ sp.diags(cs)
        self.rs, self.cs = rs, cs
        self.m, self.n = m, n
        self.A = sp.csr_matrix(A)
        self.c_orig = np.asarray(lp.c, float)
        self.c = self.c_orig * cs
        self.lb = np.concatenate([lp.lb / cs, lp.row_lo * rs])
        self.ub = np.concatenate([lp.ub / cs, lp.row_hi * rs])
        self.c0 = lp.c0
        self.iterations = 0
        self.t0 = time.perf_counter()

    def solve(self) -> LPOutcome:
        m, n = self.m, self.n
        tol = self.opts.feas_tol
        x = np.zeros(n + m)
        for j in range(n):
            x[j] = _start_value(self.lb[j], self.ub[j])
        act = self.A @ x[:n] if n else np.zeros(m)
        basis = np.arange(n, n + m)
        lo, hi = self.lb[n:], self.ub[n:]
        bad = (act < lo - tol) | (act > hi + tol)
        art_rows = np.flatnonzero(bad)
        target = np.where(act < lo, lo, hi)
        x[n:] = np.where(bad, target, act)
        # A_i x - r_i + sign * a_i = 0 with a_i >= 0
        art_sign = np.where(target[art_rows] > act[art_rows], 1.0, -1.0)
        n_art = len(art_rows)
        self.K = sp.hstack([self.A, -sp.identity(m, format="csr"),
                            sp.csr_matrix((art_sign, (art_rows, np.arange(n_art))), shape=(m, n_art))],
                           format="csc")
        self.KT = self.K.T.tocsr()
        self.total = n + m + n_art
        x = np.concatenate([x, np.abs(act[art_rows] - x[n + art_rows])])
        lb = np.concatenate([self.lb, np.zeros(n_art)])
        ub = np.concatenate([self.ub, np.full(n_art, np.inf)])
        basis[art_rows] = n + m + np.arange(n_art)  # the artificial replaces the slack in the basis
        if n_art:
            cost1 = np.concatenate([np.zeros(n + m), np.ones(n_art)])
            status = self._iterate(x, lb, ub, basis, cost1)
            if status != "optimal":
                return LPOutcome(status, None, np.nan, self.iterations, "phase one failed")
            if cost1 @ x > tol * max(1.0, n_art):
                return LPOutcome("infeasible", None, np.inf, self.iterations, "phase one objective > 0")
            ub[n + m:] = 0.0
            x[n + m:] = np.clip(x[n + m:], 0.0, 0.0)
        cost2 = np.concatenate([self.c, np.zeros(m + n_art)])
        status = self._iterate(x, lb, ub, basis, cost2)
        if status != "optimal":
            return LPOutcome(status, None, -np.inf if status == "unbounded" else np.nan, self.iterations)
        xs = x[:n] * self.cs
        return LPOutcome("optimal", xs, float(self.c_orig @ xs + self.c0), self.iterations)

    # basis algebra -----------------------------------------------------------

    def _factor(self, basis, x):
        self.lu = splu(self.K[:, basis].tocsc(), permc_spec="COLAMD")
        self.etas = []
        # recompute basic values from the nonbasic ones to shed drift
        xn = x.copy()
        xn[basis] = 0.0
        x[basis] = self.lu.solve(-(self.K @ xn))

    def _ftran(self, v):
        v = self.lu.solve(v)
        for r, piv, idx, vals in self.etas:
            vr = v[r] / piv
            if vr != 0.0:
                v[idx] -= vals * vr
            v[r] = vr
        return v

    def _btran(self, w):
        w = w.copy()
        for r, piv, idx, vals in reversed(self.etas):
            w[r] = (w[r] - vals @ w[idx]) / piv
        return self.lu.solve(w, trans="T")

    def _column(self, q):
        col = np.zeros(self.m)
        lo, hi = self.K.indptr[q], self.K.indptr[q + 1]
        col[self.K.indices[lo:hi]] = self.K.data[lo:hi]
        return col

    # main loop ---------------------------------------------------------------

    def _iterate(self, x, lb, ub, basis, cost):
        m = self.m
        tol = self.opts.feas_tol
        dtol = 1e-9
        in_basis = np.zeros(self.total, dtype=bool)
        in_basis[basis] = True
        stall = 0
        since_factor = None
        max_iter = 50 * (self.total + m) + 1000
        while True:
            if self.iterations > max_iter:
                return "numerical"
            if self.opts.time_limit is not None and time.perf_counter() - self.t0 > self.opts.time_limit:
                return "time_limit"
            if since_factor is None or since_factor >= self.refactor_every:
                try:
                    self._factor(basis, x)
                except RuntimeError:
                    return "numerical"
                since_factor = 0
            y = self._btran(cost[basis])
            d = cost - self.KT @ y
            can_up = (d < -dtol) & (x < ub - tol)
            can_down = (d > dtol) & (x > lb + tol)
            elig = (can_up | can_down) & ~in_basis
            if not elig.any():
                if since_factor:
                    # confirm on a fresh factorization before declaring optimality
                    since_factor = None
                    continue
                return "optimal"
            if stall >= self.stall_limit:
                q = int(np.argmax(elig))  # Bland: lowest index
            else:
                q = int(np.argmax(np.where(elig, np.abs(d), -1.0)))
            direction = 1.0 if can_up[q] else -1.0
            alpha = self._ftran(self._column(q))
            a = alpha * direction          # x_B moves by -a * step
            xb, lbb, ubb = x[basis], lb[basis], ub[basis]
            pos, neg = a > self.pivot_tol, a < -self.pivot_tol
            # pass one: largest step with bounds relaxed by tol
            relaxed = np.full(m, np.inf)
            relaxed[pos] = (xb[pos] - lbb[pos] + tol) / a[pos]
            relaxed[neg] = (ubb[neg] - xb[neg] + tol) / -a[neg]
            t_max = relaxed.min() if m else np.inf
            span = ub[q] - lb[q]
            if not np.isfinite(t_max) and not np.isfinite(span):
                return "unbounded"
            self.iterations += 1
            if span <= t_max:
                # bound flip of the entering column
                step = span
                x[basis] -= a * step
                x[q] = ub[q] if direction > 0 else lb[q]
                stall = 0
                continue
            # pass two: among exact ratios within t_max, the largest pivot
            exact = np.full(m, np.inf)
            exact[pos] = (xb[pos] - lbb[pos]) / a[pos]
            exact[neg] = (ubb[neg] - xb[neg]) / -a[neg]
            cand = np.flatnonzero(exact <= t_max)
            if stall >= self.stall_limit:
                r = int(cand[np.argmin(basis[cand])])
            else:
                r = int(cand[np.argmax(np.abs(a[cand]))])
            step = max(exact[r], 0.0)
            stall = stall + 1 if step <= 1e-12 else 0
            x[basis] -= a * step
            x[q] += direction * step
            j_out = basis[r]
            x[j_out] = lb[j_out] if a[r] > 0 else ub[j_out]
            in_basis[j_out] = False
            in_basis[q] = True
            basis[r] = q
            idx = np.flatnonzero(alpha)
            idx = idx[idx != r]
            self.etas.append((r, alpha[r], idx, alpha[idx]))
            since_factor += 1


def _start_value(lo, hi):
    if np.isfinite(lo):
        return lo
    if np.isfinite(hi):
        return hi
    return 0.0


def lp_solve(pi, opts: SolveOptions | None = None, backend: str = "highs") -> SolveResult:
    """Solve the continuous relaxation of ``pi`` (cones not allowed).

    Binary columns are treated as continuous within their bounds.
    """
    opts = opts or SolveOptions()
    if pi.cones:
        raise ValueError("lp_solve takes linear instances only; use oa_loop for cones")
    t0 = time.perf_counter()
    out = solve_linear(LinearProgram.from_instance(pi), opts, backend)
    res = SolveResult(status=out.status, x=out.x, objective=out.objective,
                      bound=out.objective if out.status == "optimal" else None,
                      iterations=out.iterations, lp_solves=1)
    res.runtime = time.perf_counter() - t0
    res.log.append(f"lp backend={backend} status={out.status} obj={out.objective:.9g} iters={out.iterations}")
    res.finalize()
    return res
