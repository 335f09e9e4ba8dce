from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

STATUSES = ("optimal", "infeasible", "unbounded", "gap_limit", "node_limit", "time_limit", "numerical")


@dataclass(frozen=True)
class SolveOptions:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-6
    cone_tol: float = 1e-6
    mip_gap: float = 1e-4
    int_tol: float = 1e-6
    max_oa_rounds: int = 200
    node_limit: Optional[int] = None
    time_limit: Optional[float] = None
    deterministic_seed: int = 0
    backend: str = "highs"
    # cuts slack for this many consecutive LP solves are dropped; None keeps all
    cut_purge_age: Optional[int] = 3

    def __post_init__(self):
        for name in ("feas_tol", "opt_tol", "cone_tol", "mip_gap", "int_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_oa_rounds < 1:
            raise ValueError("max_oa_rounds must be >= 1")

    @classmethod
    def from_json(cls, path) -> "SolveOptions":
        with open(path) as fh:
            return cls(**json.load(fh))


@dataclass
class SolveResult:
    status: str
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    bound: Optional[float] = None
    gap: Optional[float] = None
    iterations: int = 0
    nodes: int = 0
    cuts: int = 0
    oa_rounds: int = 0
    lp_solves: int = 0
    max_cone_violation: float = 0.0
    runtime: float = 0.0
    bound_trajectory: list = field(default_factory=list)
    log: list = field(default_factory=list)
    solution: object = None

    def finalize(self):
        if self.objective is not None and self.bound is not None and np.isfinite(self.objective) \
                and np.isfinite(self.bound):
            self.gap = (self.objective - self.bound) / max(1.0, abs(self.objective))
        return self

    def summary(self) -> dict:
        def num(v):
            return None if v is None or not np.isfinite(v) else float(v)

        return {
            "status": self.status,
            "objective": num(self.objective),
            "bound": num(self.bound),
            "gap": num(self.gap),
            "iterations": self.iterations,
            "nodes": self.nodes,
            "cuts": self.cuts,
            "oa_rounds": self.oa_rounds,
            "lp_solves": self.lp_solves,
            "max_cone_violation": float(self.max_cone_violation),
            "runtime_s": float(self.runtime),
        }
