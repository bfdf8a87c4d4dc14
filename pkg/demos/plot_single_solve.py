"""
Solving one instance to global optimality
=========================================

A small two-cell network is solved by branch-reduce-and-bound.  We follow
the upper and lower bounds as the search progresses, then confirm that the
returned beamformer really satisfies every constraint.
"""

from compbeam import Instance, SystemParams, check_feasible, generate_scenario, solve_dbrb

params = SystemParams(num_bs=2, antennas_per_bs=2, num_users=3, backhaul_cap=10.0)
inst = Instance(params, generate_scenario(params, seed=1))

res = solve_dbrb(inst, eps_rel=1e-3)
print(f"status {res.status} after {res.iterations} iterations, "
      f"{res.stats.socp_solves} relaxations, {res.wall_time:.1f} s")

step = max(1, len(res.trace) // 10)
print(" iter      upper      lower")
for row in res.trace[::step]:
    print(f"{row.iteration:5d} {row.ub:10.4f} {row.lb:10.4f}")

inc = res.incumbent
print("sum rate (nats per channel use):", round(inc.objective, 4))
print("per-user rates:", inc.rates.round(3))
print("BS-user links:\n", inc.x.reshape(params.num_bs, params.num_users).astype(int))
print("constraint violations:", check_feasible(inc.w, inc.x, inc.u, params, inst.channels))
