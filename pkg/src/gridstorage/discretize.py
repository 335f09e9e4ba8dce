"""Time integration of the energy buffer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import StorageDevice, TimeGrid

INTEGRATION_RULES = ("trapezoid", "endpoint-initial", "endpoint-final")


def integrate_step(rule: str, p_k: float, p_k1: float, t: float) -> float:
    """Approximate the integral of power over one step of length ``t`` hours.

    ``trapezoid`` averages the two sample powers, ``endpoint-initial`` uses
    the power at the start of the step and ``endpoint-final`` the one at the
    end.
    """
    if not t > 0:
        raise ValueError(f"step length must be > 0, got {t}")
    if rule == "trapezoid":
        return 0.5 * (p_k + p_k1) * t
    if rule == "endpoint-initial":
        return p_k * t
    if rule == "endpoint-final":
        return p_k1 * t
    raise ValueError(f"unknown integration rule {rule!r}")


def net_charge(dev: StorageDevice, p_c, p_d):
    """Power entering the buffer after conversion losses."""
    return dev.eta_c * np.asarray(p_c) - np.asarray(p_d) / dev.eta_d


def energy_update(dev: StorageDevice, rule: str, e_prev: float, p_c: float, p_d: float,
                  t: float, p_c_prev: float | None = None, p_d_prev: float | None = None) -> float:
    """Energy (MWh) after one step of charging ``p_c`` / discharging ``p_d`` MW.

    Under the trapezoid rule the previous step's powers enter with weight
    one half; pass ``p_c_prev``/``p_d_prev`` for that. Without them (the
    first step of a horizon) the endpoint form is used.
    """
    if p_c < 0 or p_d < 0:
        raise ValueError("charge and discharge powers must be >= 0")
    if not t > 0:
        raise ValueError(f"step length must be > 0, got {t}")
    now = dev.eta_c * p_c - p_d / dev.eta_d
    if rule == "endpoint":
        return e_prev + t * now
    if rule == "trapezoid":
        if p_c_prev is None and p_d_prev is None:
            return e_prev + t * now
        p_c_prev = p_c_prev or 0.0
        p_d_prev = p_d_prev or 0.0
        before = dev.eta_c * p_c_prev - p_d_prev / dev.eta_d
        return e_prev + 0.5 * t * (now + before)
    raise ValueError(f"unknown discretization rule {rule!r}")


@dataclass(frozen=True)
class EnergyDynamics:
    """Linear coefficients of the energy-update rows of one device.

    Row ``k`` reads ``E[k] - E[k-1] - cc[k, j] * Pc[j] - cd[k, j] * Pd[j] = rhs[k]``
    summed over the steps ``j`` in ``{k-1, k}``; ``E[-1]`` is absent and
    its value ``e_init`` sits in ``rhs[0]``.
    """

    rule: str
    charge: np.ndarray      # (n, 2): weights on Pc[k], Pc[k-1]
    discharge: np.ndarray   # (n, 2): weights on Pd[k], Pd[k-1]
    rhs: np.ndarray


def energy_dynamics(dev: StorageDevice, grid: TimeGrid, e_init=None) -> EnergyDynamics:
    """Energy-update coefficients in the units of ``e_init`` per unit power."""
    T = grid.durations
    n = grid.n
    w_now = np.array(T, dtype=float)
    w_prev = np.zeros(n)
    if grid.rule == "trapezoid":
        w_now[1:] = 0.5 * T[1:]
        w_prev[1:] = 0.5 * T[1:]
    elif grid.rule != "endpoint":
        raise ValueError(f"unknown discretization rule {grid.rule!r}")
    charge = np.column_stack([dev.eta_c * w_now, dev.eta_c * w_prev])
    discharge = np.column_stack([-w_now / dev.eta_d, -w_prev / dev.eta_d])
    rhs = np.zeros(n)
    rhs[0] = dev.e_init if e_init is None else e_init
    return EnergyDynamics(grid.rule, charge, discharge, rhs)


@dataclass(frozen=True)
class BoundaryRow:
    """``coef_last * E[n-1] (sense) rhs``; ``None`` when no extra row is needed."""

    sense: str
    rhs: float
    description: str


def boundary_constraint(dev: StorageDevice, n: int):
    """Extra end-of-horizon row for the device's terminal condition.

    ``fixed_init`` adds nothing (the first update already anchors the buffer
    at ``e_init``). ``terminal_ge_initial`` requires the final content to be
    at least the initial content, ``terminal_fixed`` pins it.
    """
    tc = dev.terminal_condition
    if tc.kind == "fixed_init":
        return None
    if tc.kind == "terminal_ge_initial":
        return BoundaryRow(">=", dev.e_init, f"E[{n}] >= e_init")
    if tc.kind == "terminal_fixed":
        if tc.value is None or tc.value > dev.e_max or tc.value < 0:
            raise ValueError(f"{dev.id}: terminal value {tc.value} outside [0, e_max={dev.e_max}]")
        return BoundaryRow("==", tc.value, f"E[{n}] == {tc.value}")
    raise ValueError(f"unknown terminal condition {tc.kind!r}")
