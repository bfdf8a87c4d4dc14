"""Brute-force reference optimizer for tiny instances.

Every connected selection ``x`` is enumerated, and for each one the rate
grid ``z_lo + delta * i`` is searched for the feasible point with the
largest sum.  For fixed ``x`` the feasible rates form a down-closed set, so
the last grid coordinate is scanned with a staircase pointer instead of
testing every grid point; the result is identical to a full scan.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from . import cones
from .dbrb import solve_dbrb
from .problem import InfeasibleInstanceError, Instance, compute_root_box
from .scenario import scenario_to_dict

MAX_LINKS = 8
MAX_USERS = 3


class OracleCostError(ValueError):
    """Instance too large for exhaustive enumeration."""


@dataclass
class OracleResult:
    objective: float
    x: np.ndarray | None
    z: np.ndarray | None
    delta: float
    feas_solves: int
    solver_failures: int = 0

    @property
    def feasible(self):
        return self.x is not None


class _GridFeasibility:
    def __init__(self, inst: Instance):
        self.inst = inst
        self.cache = {}
        self.solves = 0
        self.failures = 0

    def __call__(self, x, z):
        key = (x.tobytes(), tuple(np.round(z, 9)))
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        ok = self._check(x, z)
        self.cache[key] = ok
        return ok

    def _check(self, x, z):
        inst = self.inst
        load = x.reshape(inst.B, inst.K) @ z
        if np.any(load > inst.params.backhaul_cap):
            return False
        prog = cones.build_feasibility_program(x, z, inst)
        self.solves += 1
        sol = cones.solve(prog)
        if sol.status == cones.FAILURE:
            sol = cones.solve(prog, backend="cvxopt")
        if sol.status == cones.FAILURE:
            self.failures += 1
            return False
        return sol.status == cones.OPTIMAL


def _selections(B, K):
    for bits in itertools.product((0.0, 1.0), repeat=B * K):
        x = np.array(bits)
        if np.all(x.reshape(B, K).sum(axis=0) >= 1):
            yield x


def _best_for_selection(x, grids, feasible):
    """Largest grid sum among feasible points for a fixed selection."""
    K = len(grids)
    best_val, best_z = -math.inf, None

    def recurse(prefix):
        nonlocal best_val, best_z
        d = len(prefix)
        if d == K - 1:
            return _staircase(prefix)
        any_ok = False
        for v in grids[d]:
            base = prefix + [v] + [g[0] for g in grids[d + 1:]]
            if not feasible(x, np.array(base)):
                break
            any_ok = True
            recurse(prefix + [v])
        return any_ok

    def _staircase(prefix):
        nonlocal best_val, best_z
        last = grids[-1]
        z = np.array(prefix + [last[0]])
        if not feasible(x, z):
            return False
        lo, hi = 0, len(last) - 1
        z[-1] = last[hi]
        if not feasible(x, z):
            while hi - lo > 1:
                mid = (lo + hi) // 2
                z[-1] = last[mid]
                if feasible(x, z):
                    lo = mid
                else:
                    hi = mid
            z[-1] = last[lo]
        val = float(z.sum())
        if val > best_val:
            best_val, best_z = val, z.copy()
        return True

    recurse([])
    return best_val, best_z


def enumerate_optimal(inst: Instance, delta=0.05) -> OracleResult:
    """Grid-search optimum; within ``K * delta`` below the true optimum."""
    B, K = inst.B, inst.K
    if B * K > MAX_LINKS or K > MAX_USERS:
        raise OracleCostError(
            f"oracle limited to B*K <= {MAX_LINKS} and K <= {MAX_USERS}, "
            f"got B={B}, K={K}")
    if not delta > 0:
        raise ValueError("grid step must be positive")
    feasible = _GridFeasibility(inst)
    try:
        root = compute_root_box(inst.params, inst.channels)
    except InfeasibleInstanceError:
        return OracleResult(-math.inf, None, None, delta, 0)
    lo, hi = root.pz, root.qz
    grids = [list(lo[k] + delta * np.arange(int(np.floor((hi[k] - lo[k]) / delta + 1e-9)) + 1))
             for k in range(K)]

    best = OracleResult(-math.inf, None, None, delta, 0)
    for x in _selections(B, K):
        val, z = _best_for_selection(x, grids, feasible)
        if z is not None and val > best.objective:
            best = OracleResult(val, x, z, delta, 0)
    best.feas_solves = feasible.solves
    best.solver_failures = feasible.failures
    return best


def oracle_vs_dbrb(inst: Instance, delta=0.05, eps_abs=1e-2, eps_rel=1e-3,
                   solver_tol=1e-6, max_iter=100_000):
    """Cross-check the branch-and-bound result against grid enumeration.

    Returns a JSON-ready report; ``report["pass"]`` holds the verdict and a
    failing report carries the instance and the full iteration trace.
    """
    t0 = time.perf_counter()
    orc = enumerate_optimal(inst, delta)
    t_oracle = time.perf_counter() - t0
    res = solve_dbrb(inst, eps_rel=eps_rel, eps_abs=eps_abs, max_iter=max_iter)
    t_dbrb = res.wall_time

    K = inst.K
    report = {
        "oracle_objective": orc.objective if orc.feasible else None,
        "oracle_x": None if orc.x is None else orc.x.tolist(),
        "oracle_z": None if orc.z is None else orc.z.tolist(),
        "oracle_feas_solves": orc.feas_solves,
        "oracle_seconds": t_oracle,
        "dbrb_status": res.status,
        "dbrb_lower": res.lower if res.incumbent is not None else None,
        "dbrb_upper": res.upper if math.isfinite(res.upper) else None,
        "dbrb_iterations": res.iterations,
        "dbrb_seconds": t_dbrb,
        "delta": delta,
        "eps_abs": eps_abs,
        "tolerance": K * delta + eps_abs,
    }
    if not orc.feasible:
        ok = res.status == "infeasible"
        report["checks"] = {"both_infeasible": ok}
    elif res.incumbent is None:
        ok = False
        report["checks"] = {"dbrb_found_incumbent": False}
    else:
        diff = abs(res.lower - orc.objective)
        checks = {
            "lower_matches": diff <= K * delta + eps_abs,
            "upper_dominates": res.upper >= orc.objective - solver_tol,
        }
        report["lower_minus_oracle"] = res.lower - orc.objective
        report["checks"] = checks
        ok = all(checks.values())
    report["pass"] = bool(ok)
    if not ok:
        report["instance"] = scenario_to_dict(inst.params, inst.channels)
        report["trace"] = [vars(r) for r in res.trace]
    return report
