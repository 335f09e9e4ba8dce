"""Command-line entry point.

Exit codes: 0 success, 1 parse/validation/usage error, 2 infeasible (or a
schedule failing ``check``), 3 solver limit reached, 4 numerical trouble.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from .datamodel import ValidationError
from .formulation import FORMULATIONS, ac_model_description, build_problem
from .ingest import CaseError, DEFAULT_SPLITS, export_json, export_lp, load_case, make_three_phase, save_case
from .solution import Solution
from .solve import SolveOptions, oa_snapshot, solve_case
from .verify import check_solution, simulate_buffer

OPTIONS_ENV = "GRIDSTORAGE_OPTIONS"
EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_LIMIT, EXIT_NUMERICAL = 0, 1, 2, 3, 4
_STATUS_EXIT = {"optimal": EXIT_OK, "infeasible": EXIT_INFEASIBLE, "node_limit": EXIT_LIMIT,
                "time_limit": EXIT_LIMIT, "gap_limit": EXIT_LIMIT, "unbounded": EXIT_NUMERICAL,
                "numerical": EXIT_NUMERICAL}

log = logging.getLogger("gridstorage")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def _splits(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected exactly three phase fractions")
    return vals


def _options(args) -> SolveOptions:
    kw = {}
    path = getattr(args, "options", None) or os.environ.get(OPTIONS_ENV)
    if path:
        with open(path) as fh:
            kw.update(json.load(fh))
    for name in ("time_limit", "node_limit", "mip_gap"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    if getattr(args, "seed", None) is not None:
        kw["deterministic_seed"] = args.seed
    return SolveOptions(**kw)


def _load(args):
    return load_case(args.case, rule=getattr(args, "discretization", None),
                     interp_factor=getattr(args, "interp_factor", None))


def cmd_solve(args) -> int:
    net, grid = _load(args)
    opts = _options(args)
    res = solve_case(net, grid, args.formulation, args.segments, opts)
    os.makedirs(args.out, exist_ok=True)
    summary = res.summary()
    summary.update(formulation=args.formulation, case=os.path.abspath(args.case), steps=grid.n, rule=grid.rule)
    if res.solution is not None:
        summary["pwl_error_bound"] = res.solution.meta.get("pwl_error_bound")
        res.solution.to_json(os.path.join(args.out, "solution.json"))
        with open(os.path.join(args.out, "dispatch.csv"), "w") as fh:
            fh.write(res.solution.dispatch_csv(grid))
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    if args.log:
        with open(args.log, "w") as fh:
            fh.write("\n".join(res.log) + "\n")
            fh.write("bound_trajectory " + " ".join(f"{b:.10g}" for b in res.bound_trajectory) + "\n")
    print(json.dumps(summary, indent=1))
    return _STATUS_EXIT.get(res.status, EXIT_NUMERICAL)


def cmd_check(args) -> int:
    net, grid = _load(args)
    sol = Solution.from_json(args.solution)
    try:
        report = check_solution(net, grid, sol, args.tol)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(report.to_json() if args.json else "\n".join(report.lines()))
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def read_schedule(path, net, n):
    """Per-device (p_c, p_d, status) arrays from a ``step,device,p_charge_mw,p_discharge_mw[,status]`` CSV."""
    sched = {d.id: (np.zeros(n), np.zeros(n), np.array(d.status, dtype=float)) for d in net.storages}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            dev = row["device"]
            if dev not in sched:
                raise CaseError(f"{path}:device", f"unknown storage device {dev!r}")
            k = int(row["step"]) - 1
            if not 0 <= k < n:
                raise CaseError(f"{path}:step", f"step {k + 1} outside 1..{n}")
            pc, pd, st = sched[dev]
            pc[k] = float(row["p_charge_mw"] or 0.0)
            pd[k] = float(row["p_discharge_mw"] or 0.0)
            if row.get("status") not in (None, ""):
                st[k] = float(row["status"])
    return sched


def cmd_simulate(args) -> int:
    net, grid = _load(args)
    sched = read_schedule(args.schedule, net, grid.n)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "time_h", "device", "p_charge_mw", "p_discharge_mw", "energy_mwh", "clipped"])
    times = grid.times
    n_clips = 0
    for d in net.storages:
        pc, pd, st = sched[d.id]
        sim = simulate_buffer(d, grid, pc, pd, st)
        clipped = {c.step for c in sim.clips}
        for c in sim.clips:
            print(f"clip device={d.id} step={c.step} kind={c.kind} commanded={c.commanded:.6g} "
                  f"applied={c.applied:.6g}", file=sys.stderr)
        n_clips += len(sim.clips)
        for k in range(grid.n):
            w.writerow([k + 1, repr(float(times[k])), d.id, repr(float(sim.p_c[k])), repr(float(sim.p_d[k])),
                        repr(float(sim.energy[k])), int(k + 1 in clipped)])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_replicate3p(args) -> int:
    net, grid = _load(args)
    try:
        net3 = make_three_phase(net, args.splits)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.out:
        save_case(net3, grid, args.out)
    else:
        from .ingest import dump_case

        print(json.dumps(dump_case(net3, grid), indent=1))
    return EXIT_OK


def cmd_export(args) -> int:
    net, grid = _load(args)
    if args.formulation in ("ac-nl", "ac-mi"):
        if args.format != "json":
            print("error: AC formulations export as json only", file=sys.stderr)
            return EXIT_INPUT
        text = json.dumps(ac_model_description(net, grid, args.formulation[3:]), indent=1)
        _emit(text, args.out)
        return EXIT_OK
    pi = build_problem(net, grid, args.formulation, args.segments)
    if args.format == "json":
        _emit(export_json(pi), args.out)
        return EXIT_OK
    if pi.cones:
        if not args.oa_snapshot:
            print("error: conic instance; pass --oa-snapshot to export its outer approximation",
                  file=sys.stderr)
            return EXIT_INPUT
        pi = oa_snapshot(pi, _options(args))
    _emit(export_lp(pi), args.out)
    return EXIT_OK


def _emit(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gridstorage", description="Multi-period OPF with flexible grid-connected storage.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def case_args(p):
        p.add_argument("case", help="case JSON file")
        p.add_argument("--discretization", choices=("endpoint", "trapezoid"), default=None,
                       help="override the case's energy-update rule")
        p.add_argument("--interp-factor", type=int, default=None,
                       help="override the profile interpolation factor")

    p = sub.add_parser("solve", help="build and solve one formulation")
    case_args(p)
    p.add_argument("--formulation", choices=sorted(FORMULATIONS), default="dc-mi")
    p.add_argument("--segments", type=int, default=32, help="PWL cost segments per generator")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--options", help=f"SolveOptions JSON (default: ${OPTIONS_ENV})")
    p.add_argument("--mip-gap", dest="mip_gap", type=float)
    p.add_argument("--time-limit", dest="time_limit", type=float)
    p.add_argument("--node-limit", dest="node_limit", type=int)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--log", help="write the solver log here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check", help="verify a solution against the nonlinear model")
    case_args(p)
    p.add_argument("solution", help="solution JSON written by 'solve'")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="forward-simulate storage buffers for a schedule")
    case_args(p)
    p.add_argument("schedule", help="CSV with step,device,p_charge_mw,p_discharge_mw[,status]")
    p.add_argument("--out", help="trajectory CSV (default stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replicate3p", help="write the three-phase replicate of a single-phase case")
    case_args(p)
    p.add_argument("--splits", type=_splits, default=DEFAULT_SPLITS, help="phase fractions a,b,c")
    p.add_argument("--out", help="case JSON (default stdout)")
    p.set_defaults(func=cmd_replicate3p)

    p = sub.add_parser("export", help="write a problem instance for external solvers")
    case_args(p)
    p.add_argument("--formulation", choices=sorted(FORMULATIONS) + ["ac-mi", "ac-nl"], default="dc-mi")
    p.add_argument("--format", choices=("lp", "json"), default="lp")
    p.add_argument("--segments", type=int, default=32)
    p.add_argument("--oa-snapshot", action="store_true", help="linearize cones by outer approximation")
    p.add_argument("--options", help=f"SolveOptions JSON (default: ${OPTIONS_ENV})")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation failed:\n{exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CaseError, json.JSONDecodeError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
