"""Two-step copper-plate example: storage shifts 4 MW from the peak.

Solves the toy case with DC-MI, then with a lossy converter under SOC-MI,
and forward-simulates the resulting buffer schedule.

    python demos/toy_storage.py
"""

import dataclasses

import numpy as np

from gridstorage.ingest import load_bundled, without_storage
from gridstorage.solve import solve_case
from gridstorage.verify import check_solution, simulate_buffer


def show(label, res, grid):
    s = res.solution
    print(f"{label}: status={res.status} objective={res.objective:.6f} $")
    for k in range(grid.n):
        print(f"  step {k + 1}: charge {s.p_c[0, k]:6.3f} MW  discharge {s.p_d[0, k]:6.3f} MW  "
              f"energy {s.e[0, k]:6.3f} MWh")


def main():
    net, grid = load_bundled("toy_2step.json")
    base = solve_case(without_storage(net), grid, "dc-mi")
    print(f"without storage: objective={base.objective:.6f} $")
    dc = solve_case(net, grid, "dc-mi")
    show("DC-MI", dc, grid)

    dev = net.storages[0]
    lossy = net.replace(storages=(dataclasses.replace(dev, z_phase={c: 0.1 + 0.02j for c in dev.z_phase}),))
    soc = solve_case(lossy, grid, "soc-mi")
    show("SOC-MI, Z = 0.1 + 0.02j pu", soc, grid)
    rep = check_solution(lossy, grid, soc.solution)
    print(f"verifier: feasible={rep.feasible}")

    sim = simulate_buffer(dev, grid, soc.solution.p_c[0], soc.solution.p_d[0])
    print("forward simulation energy:", np.round(sim.energy, 6), "clips:", len(sim.clips))


if __name__ == "__main__":
    main()
