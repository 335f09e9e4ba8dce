"""In-repo optimization engine: LP backends, branch-and-bound, outer approximation."""

from __future__ import annotations

import time

from ..datamodel import Network, TimeGrid
from ..formulation import DEFAULT_SEGMENTS, build_problem
from ..solution import decode
from .engine import CutPool, cone_cut, mip_solve, oa_loop, oa_snapshot
from .lp import BoundedSimplex, LinearProgram, lp_solve, solve_linear
from .options import SolveOptions, SolveResult

__all__ = [
    "BoundedSimplex", "CutPool", "LinearProgram", "SolveOptions", "SolveResult", "cone_cut", "lp_solve",
    "mip_solve", "oa_loop", "oa_snapshot", "solve_case", "solve_instance", "solve_linear",
]


def solve_instance(pi, opts: SolveOptions | None = None) -> SolveResult:
    """Dispatch to LP, OA or branch-and-bound depending on what ``pi`` holds."""
    opts = opts or SolveOptions()
    if pi.cones:
        return oa_loop(pi, opts)
    if len(pi.binaries):
        return mip_solve(pi, opts)
    return lp_solve(pi, opts, opts.backend)


def solve_case(net: Network, grid: TimeGrid, formulation: str = "dc-mi", segments: int = DEFAULT_SEGMENTS,
               opts: SolveOptions | None = None) -> SolveResult:
    """Build, solve and decode one formulation; ``result.solution`` holds the schedule."""
    t0 = time.perf_counter()
    pi = build_problem(net, grid, formulation, segments)
    res = solve_instance(pi, opts)
    if res.x is not None:
        sol = decode(pi, res.x, net, grid)
        sol.objective = res.objective
        sol.bound = res.bound if res.bound is not None else float("nan")
        sol.gap = res.gap if res.gap is not None else float("nan")
        sol.status = res.status
        sol.meta = {"pwl_error_bound": pi.meta.get("pwl_error_bound", 0.0), "segments": segments,
                    "rule": grid.rule}
        res.solution = sol
    res.runtime = time.perf_counter() - t0
    return res
