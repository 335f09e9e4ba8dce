"""Independent reference computations shared by the unit and acceptance tests."""

import itertools

import numpy as np
from scipy.integrate import quad
from scipy.optimize import linprog

from gridstorage.datamodel import StorageDevice, TerminalCondition, TimeGrid
from gridstorage.discretize import energy_dynamics, net_charge
from gridstorage.problem import ModelBuilder


def random_milp(rng, n_bin=None, n_cont=None, n_rows=None):
    """Feasible, bounded MILP with on/off links between binaries and continuous columns."""
    n_bin = n_bin or int(rng.integers(2, 13))
    n_cont = n_cont or int(rng.integers(2, 8))
    n_rows = n_rows or int(rng.integers(2, 8))
    m = ModelBuilder("RAND")
    z = [m.var(("z", "b", None, i), 0.0, 1.0, cost=rng.normal(0, 3), binary=True) for i in range(n_bin)]
    x = [m.var(("x", "c", None, i), 0.0, rng.uniform(2, 10), cost=rng.normal(0, 2)) for i in range(n_cont)]
    for i, zi in enumerate(z):
        m.row([(x[i % n_cont], 1.0), (zi, -rng.uniform(1, 8))], "<=", 0.0, f"link{i}", "link")
    x0 = np.zeros(m.n_cols)
    x0[z] = rng.integers(0, 2, n_bin)
    for r in range(n_rows):
        cols = rng.choice(m.n_cols, size=min(4, m.n_cols), replace=False)
        coefs = rng.normal(0, 1, len(cols))
        act = float(coefs @ x0[cols])
        sense = rng.choice(["<=", ">="])
        rhs = act + rng.uniform(0, 3) if sense == "<=" else act - rng.uniform(0, 3)
        m.row(zip(cols, coefs), sense, rhs, f"r{r}", "random")
    return m.build()


def enumerate_milp(pi):
    """Brute force: fix every binary pattern and solve the LP with a direct scipy call."""
    lo, hi = pi.row_bounds()
    A = pi.A.toarray()
    finite_hi, finite_lo = np.isfinite(hi), np.isfinite(lo)
    A_ub = np.vstack([A[finite_hi], -A[finite_lo]])
    b_ub = np.concatenate([hi[finite_hi], -lo[finite_lo]])
    best = np.inf
    bins = list(pi.binaries)
    for pattern in itertools.product((0.0, 1.0), repeat=len(bins)):
        lb, ub = np.array(pi.lb), np.array(pi.ub)
        lb[bins] = ub[bins] = pattern
        r = linprog(pi.c, A_ub=A_ub, b_ub=b_ub, bounds=list(zip(lb, ub)), method="highs")
        if r.status == 0:
            best = min(best, r.fun + pi.c0)
    return best


def toy_grid_enumeration(step=0.25):
    """Copper-plate toy optimum by enumerating net storage power on a grid.

    Loads (2, 10) MW, one hour each, cost 0.2 P^2, lossless 4 MW device
    starting empty that must end at least as full as it started.
    """
    s = np.arange(-4.0, 4.0 + 1e-9, step)
    return min(0.2 * (2 + a) ** 2 + 0.2 * (10 + b) ** 2 for a in s for b in s if a >= 0 and a + b >= 0)


def buffer_device(eta_c, eta_d, n, e_init=2.0):
    return StorageDevice(id="s", bus="1", status=np.ones(n), s_ext=np.zeros(n), s_rating_total=50.0, eta_c=eta_c,
                         eta_d=eta_d, e_init=e_init, e_max=100.0, p_c_max=10.0, p_d_max=10.0,
                         z_phase={"a": 0j}, terminal_condition=TerminalCondition())


def row_trajectory(dev, grid, p_c, p_d):
    """Energy at the end of every step from the linear update rows."""
    dyn = energy_dynamics(dev, grid)
    e, out = dev.e_init, []
    for k in range(grid.n):
        de = dyn.charge[k, 0] * p_c[k] + dyn.discharge[k, 0] * p_d[k]
        if k:
            de += dyn.charge[k, 1] * p_c[k - 1] + dyn.discharge[k, 1] * p_d[k - 1]
        e += de
        out.append(e)
    return np.array(out)


def _integral(f, nodes):
    return sum(quad(f, a, b, epsabs=1e-15, epsrel=1e-13)[0] for a, b in zip(nodes[:-1], nodes[1:]))


def discretization_error(rule, rng):
    """Relative error of the update rows against quadrature of the matching power signal.

    ``endpoint`` is paired with piecewise-constant power, ``trapezoid`` with
    piecewise-linear power whose samples sit at step ends (the first step
    holds its sample constant).
    """
    n = int(rng.integers(2, 40))
    T = rng.uniform(0.01, 3.0, n) * rng.choice([1.0, 10.0, 0.1], n)
    eta_c, eta_d = rng.uniform(0.5, 1.0, 2)
    p_c = rng.uniform(0, 10, n) * (rng.random(n) < 0.7)
    p_d = rng.uniform(0, 10, n) * (rng.random(n) < 0.7)
    dev = buffer_device(eta_c, eta_d, n)
    nodes = np.concatenate([[0.0], np.cumsum(T)])
    rate = net_charge(dev, p_c, p_d)
    if rule == "endpoint":
        def f(t):
            k = min(np.searchsorted(nodes, t, side="right") - 1, n - 1)
            return rate[max(k, 0)]
    else:
        values = np.concatenate([[rate[0]], rate])

        def f(t):
            return np.interp(t, nodes, values)
    exact = dev.e_init + np.array([_integral(f, nodes[:k + 2]) for k in range(n)])
    got = row_trajectory(dev, TimeGrid(T, rule), p_c, p_d)
    return float(np.max(np.abs(got - exact)) / max(1.0, np.max(np.abs(exact))))


def rotated_cone_samples(rng, count):
    """Points ``(x1, x2, u, v)`` with ``x1^2 + x2^2 <= u v``, ``u, v >= 0``."""
    uu, vv = rng.uniform(0, 10, count), rng.uniform(0, 10, count)
    ang = rng.uniform(0, 2 * np.pi, count)
    rad = np.sqrt(uu * vv) * np.sqrt(rng.uniform(0, 1, count))
    return np.column_stack([rad * np.cos(ang), rad * np.sin(ang), uu, vv])


def rotated_cone_builder():
    m = ModelBuilder("CONE")
    x1 = m.var(("x", "c", "1", 0), -5, 5)
    x2 = m.var(("x", "c", "2", 0), -5, 5)
    u = m.var(("u", "c", None, 0), 0, 4)
    v = m.var(("v", "c", None, 0), 0, 4)
    m.cone((x1, x2), u=u, v=v)
    return m


def disk_builder():
    """max x1 + x2 over the unit disk; optimum -sqrt(2) in minimization form."""
    m = ModelBuilder("DISK")
    x1 = m.var(("x", "c", "1", 0), -2, 2, cost=-1.0)
    x2 = m.var(("x", "c", "2", 0), -2, 2, cost=-1.0)
    m.cone((x1, x2), u_const=1.0, v_const=1.0)
    return m
