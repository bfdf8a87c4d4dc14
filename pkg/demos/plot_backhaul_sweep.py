"""
Sum rate versus backhaul capacity
=================================

Sweeping the per-BS backhaul limit shows the two regimes of the problem:
with little backhaul the optimum is pinned to the backhaul budget, while
with plenty of it the radio side becomes the bottleneck and the curve
flattens.  The one-shot rounding heuristic is shown alongside.
"""

import numpy as np

from compbeam import Instance, SystemParams, generate_scenario, root_heuristic, solve_dbrb

caps = [2.0, 5.0, 10.0, 20.0, 40.0]
seeds = range(4)
opt = np.zeros((len(seeds), len(caps)))
heur = np.zeros_like(opt)

for i, seed in enumerate(seeds):
    for j, cap in enumerate(caps):
        params = SystemParams(num_bs=2, antennas_per_bs=2, num_users=2, backhaul_cap=cap)
        inst = Instance(params, generate_scenario(params, seed))
        h = root_heuristic(inst)
        res = solve_dbrb(inst, initial=h)
        opt[i, j] = res.lower
        heur[i, j] = h.objective if h is not None else np.nan

print(" backhaul   optimum  heuristic  ratio")
for j, cap in enumerate(caps):
    print(f"{cap:9.1f} {opt[:, j].mean():9.3f} {np.nanmean(heur[:, j]):10.3f} "
          f"{np.nanmean(heur[:, j] / opt[:, j]):6.3f}")

# every row is nondecreasing: more backhaul never hurts
assert np.all(np.diff(opt, axis=1) >= -1e-3)
