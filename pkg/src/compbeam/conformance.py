"""Analytic test programs for cone-solver backends.

Each case states the expected status and, when optimal, the objective value
(and sometimes the unique minimizer).  :func:`run_conformance` solves every
case with a backend and reports per-case agreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cones import FAILURE, INFEASIBLE, NONNEG, OPTIMAL, SOC, ZERO, ConeProgram, solve

UNBOUNDED = "unbounded"


@dataclass
class Case:
    name: str
    program: ConeProgram
    status: str
    objective: float | None = None
    x: np.ndarray | None = None


def _prog(c, blocks):
    """``blocks`` is a list of ``(kind, A_rows, b)`` with ``b - A x`` in the cone."""
    rows, rhs, cones = [], [], []
    for kind, a, b in blocks:
        a = np.atleast_2d(np.asarray(a, dtype=float))
        rows.append(a)
        rhs.append(np.atleast_1d(np.asarray(b, dtype=float)))
        cones.append((kind, a.shape[0]))
    A = sp.csc_matrix(np.vstack(rows))
    return ConeProgram(np.asarray(c, dtype=float), A, np.concatenate(rhs), cones)


def cases():
    out = []
    add = out.append

    add(Case("lp_bound", _prog([1.0], [(NONNEG, [[-1.0]], [-1.0])]),
             OPTIMAL, 1.0, np.array([1.0])))
    # max x + y on the simplex edge; minimizer not unique
    add(Case("lp_simplex", _prog([-1.0, -1.0], [
        (NONNEG, [[1, 1], [-1, 0], [0, -1]], [1, 0, 0])]), OPTIMAL, -1.0))
    add(Case("lp_equality", _prog([1.0, 1.0], [
        (ZERO, [[1, -1]], [0]), (NONNEG, [[-1, 0]], [-2])]),
        OPTIMAL, 4.0, np.array([2.0, 2.0])))
    # distance from (3, 4) to the line x + y = 0
    add(Case("soc_distance_to_line", _prog([0, 0, 1.0], [
        (ZERO, [[1, 1, 0]], [0]),
        (SOC, [[0, 0, -1], [-1, 0, 0], [0, -1, 0]], [0, -3, -4])]),
        OPTIMAL, 7 / math.sqrt(2), np.array([-0.5, 0.5, 7 / math.sqrt(2)])))
    add(Case("soc_ball_linear", _prog([-1.0, -2.0, -2.0], [
        (SOC, [[0, 0, 0], [-1, 0, 0], [0, -1, 0], [0, 0, -1]], [1, 0, 0, 0])]),
        OPTIMAL, -3.0, np.array([1 / 3, 2 / 3, 2 / 3])))
    # t >= x^2 written as ||(2x, t - 1)|| <= t + 1, with x >= 2
    add(Case("soc_parabola", _prog([0.0, 1.0], [
        (NONNEG, [[-1, 0]], [-2]),
        (SOC, [[0, -1], [-2, 0], [0, -1]], [1, 0, -1])]),
        OPTIMAL, 4.0, np.array([2.0, 4.0])))
    add(Case("soc_constant_norm", _prog([1.0], [
        (SOC, [[-1], [0], [0]], [0, 3, 4])]), OPTIMAL, 5.0, np.array([5.0])))
    # 2 sqrt(1 + y^2) - y is minimized at y = 1/sqrt(3)
    add(Case("soc_hyperbola", _prog([2.0, -1.0], [
        (SOC, [[-1, 0], [0, 0], [0, -1]], [0, 1, 0])]),
        OPTIMAL, math.sqrt(3), np.array([2 / math.sqrt(3), 1 / math.sqrt(3)])))
    add(Case("soc_least_norm", _prog([0, 0, 0, 1.0], [
        (ZERO, [[1, 1, 1, 0]], [1]),
        (SOC, [[0, 0, 0, -1], [-1, 0, 0, 0], [0, -1, 0, 0], [0, 0, -1, 0]],
         [0, 0, 0, 0])]),
        OPTIMAL, 1 / math.sqrt(3), np.array([1 / 3, 1 / 3, 1 / 3, 1 / math.sqrt(3)])))
    # single-user minimum power: ||w|| <= t, h.w >= 2 with h = (1, 2, 2)
    add(Case("soc_min_power", _prog([0, 0, 0, 1.0], [
        (NONNEG, [[-1, -2, -2, 0]], [-2]),
        (SOC, [[0, 0, 0, -1], [-1, 0, 0, 0], [0, -1, 0, 0], [0, 0, -1, 0]],
         [0, 0, 0, 0])]),
        OPTIMAL, 2 / 3, np.array([2 / 9, 4 / 9, 4 / 9, 2 / 3])))
    add(Case("soc_feasibility_only", _prog([0.0, 0.0], [
        (SOC, [[0, 0], [-1, 0], [0, -1]], [1, 0, 0])]), OPTIMAL, 0.0))
    add(Case("soc_two_cones", _prog([1.0, 1.0], [
        (SOC, [[-1, 0], [0, 0]], [0, 1]),
        (SOC, [[0, -1], [0, 0], [0, 0]], [0, 3, 4])]),
        OPTIMAL, 6.0, np.array([1.0, 5.0])))
    add(Case("infeasible_lp", _prog([1.0], [
        (NONNEG, [[-1.0], [1.0]], [-1.0, 0.0])]), INFEASIBLE))
    add(Case("infeasible_ball_halfspace", _prog([0.0, 0.0], [
        (NONNEG, [[-1, 0]], [-2]),
        (SOC, [[0, 0], [-1, 0], [0, -1]], [1, 0, 0])]), INFEASIBLE))
    add(Case("infeasible_fixed_cone", _prog([0.0, 0.0], [
        (ZERO, [[1, 0], [0, 1]], [1, 3]),
        (SOC, [[-1, 0], [0, -1]], [0, 0])]), INFEASIBLE))
    add(Case("unbounded_ray", _prog([-1.0], [(NONNEG, [[-1.0]], [0.0])]),
             UNBOUNDED))
    return out


def check_case(case: Case, backend="clarabel", tol=1e-6):
    """Return ``(passed, detail)`` for one case."""
    sol = solve(case.program, tol=min(tol, 1e-8), backend=backend)
    if case.status == UNBOUNDED:
        ok = sol.status != OPTIMAL
        return ok, f"status={sol.status} (must not be optimal)"
    if sol.status != case.status:
        return False, f"status={sol.status}, expected {case.status}"
    if case.status != OPTIMAL:
        return True, f"status={sol.status}"
    err = abs(sol.objective - case.objective)
    ok = err <= tol * max(1.0, abs(case.objective))
    if case.x is not None:
        xerr = float(np.max(np.abs(sol.x - case.x)))
        ok = ok and xerr <= math.sqrt(tol)
    return ok, f"objective={sol.objective:.10g} expected={case.objective:.10g}"


def run_conformance(backend="clarabel", tol=1e-6):
    """Solve every case; returns a list of ``(name, passed, detail)``."""
    return [(c.name, *check_case(c, backend, tol)) for c in cases()]


__all__ = ["Case", "FAILURE", "UNBOUNDED", "cases", "check_case", "run_conformance"]
