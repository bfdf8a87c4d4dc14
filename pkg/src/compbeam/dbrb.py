"""Discrete branch-reduce-and-bound over boxes in (x, z) space.

A box ``[p, q]`` lives in ``R^(BK + K)``: the first ``BK`` coordinates are the
link-selection indicators (kept in {0, 1} at both vertices), the last ``K``
are the per-user rate variables ``z``.  The objective is ``sum(z)``.

Feasibility is not monotone in ``x``: more links enlarge the beamforming
set but also the backhaul load.  Every reduction probe therefore asks a
*relaxed* question about a sub-box: is there any chance that it holds a
feasible point with objective at least the current best?  The relaxation
uses the top selection ``q_x`` for beamforming feasibility, the bottom
selection ``p_x`` for the backhaul load and the bottom rates ``p_z`` for
both, so a "no" answer is a proof that the sub-box can be discarded.
"""

from __future__ import annotations

import csv
import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import cones
from .problem import (Box, Incumbent, InfeasibleInstanceError, Instance,
                      backhaul_all, check_feasible, compute_root_box,
                      link_powers, rates, soc_rotate)

INCUMBENT_TOL = 1e-7


class SolverFailure(RuntimeError):
    """A conic subproblem ended without an optimal/infeasible verdict."""


class AtomBox(ValueError):
    """Box has no edge long enough to split."""


@dataclass
class Stats:
    socp_solves: int = 0
    feas_solves: int = 0
    solver_failures: int = 0


@dataclass(order=False)
class Node:
    box: Box
    upper: float
    created: int
    index: int
    lower: float | None = None

    def heap_key(self):
        return (-self.upper, self.created, self.index)


@dataclass
class TraceRow:
    iteration: int
    ub: float
    lb: float
    live_boxes: int
    socp_solves: int
    feas_solves: int
    elapsed_ms: float


TRACE_FIELDS = ["iter", "ub", "lb", "live_boxes", "socp_solves",
                "feas_solves", "elapsed_ms"]


@dataclass
class SolveResult:
    incumbent: Incumbent | None
    upper: float
    lower: float
    status: str
    iterations: int
    trace: list = field(default_factory=list)
    stats: Stats = field(default_factory=Stats)
    wall_time: float = 0.0

    @property
    def gap(self):
        return self.upper - self.lower

    @property
    def relative_gap(self):
        return self.gap / max(1.0, abs(self.upper))


# ---------------------------------------------------------------------------
# feasibility primitives
# ---------------------------------------------------------------------------

def _connected(x_sel, inst: Instance) -> bool:
    return bool(np.all(np.asarray(x_sel).reshape(inst.B, inst.K).sum(axis=0) >= 0.5))


def solve_feasibility(x_sel, z_floor, inst: Instance, stats: Stats | None = None):
    """Solve the fixed-selection feasibility program.

    Returns ``(status, w)`` with ``w`` in physical units when feasible.
    Disconnected selections are rejected without a solve.
    """
    if not _connected(x_sel, inst):
        return cones.INFEASIBLE, None
    prog = cones.build_feasibility_program(x_sel, z_floor, inst)
    sol = cones.solve(prog)
    if stats is not None:
        stats.feas_solves += 1
        stats.solver_failures += sol.status == cones.FAILURE
    if sol.ok:
        return sol.status, cones.beamformer_from_solution(prog, sol.x, inst)
    return sol.status, None


def point_in_S(x, z, inst: Instance, stats: Stats | None = None) -> bool:
    """Exact membership of ``s = (x, z)`` in the feasible set."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if not _connected(x, inst):
        return False
    if np.any(backhaul_all(x, z) > inst.params.backhaul_cap):
        return False
    status, _ = solve_feasibility(x, z, inst, stats)
    if status == cones.FAILURE:
        # second opinion from the reference backend before giving up
        status = cones.solve(cones.build_feasibility_program(x, z, inst),
                             backend="cvxopt").status
    if status == cones.FAILURE:
        raise SolverFailure(f"feasibility solve failed at x={x}, z={z}")
    return status == cones.OPTIMAL


def may_contain(p, q, cbo, inst: Instance, stats: Stats | None = None):
    """Relaxed test for ``[p, q]`` holding a feasible point with ``f >= cbo``.

    ``False`` is a proof of emptiness; ``None`` reports a solver failure.
    """
    nb = inst.n_links
    px, qx, pz, qz = p[:nb], q[:nb], p[nb:], q[nb:]
    if qz.sum() < cbo or not _connected(qx, inst):
        return False
    if np.any(backhaul_all(px, pz) > inst.params.backhaul_cap):
        return False
    status, _ = solve_feasibility(qx, pz, inst, stats)
    if status == cones.FAILURE:
        return None
    return status == cones.OPTIMAL


# ---------------------------------------------------------------------------
# branching
# ---------------------------------------------------------------------------

def select_box(nodes):
    if not nodes:
        raise IndexError("no live boxes")
    return min(nodes, key=Node.heap_key)


def branch(box: Box, min_width=1e-9):
    edges = box.q - box.p
    j = int(np.argmax(edges))
    if edges[j] <= (0.5 if j < box.n_bool else min_width):
        raise AtomBox("box cannot be split")
    q1, p2 = box.q.copy(), box.p.copy()
    if j < box.n_bool:
        q1[j] -= 1.0
        p2[j] += 1.0
    else:
        mid = box.p[j] + edges[j] / 2.0
        q1[j] = mid
        p2[j] = mid
    return Box(box.p, q1, box.n_bool), Box(p2, box.q, box.n_bool)


# ---------------------------------------------------------------------------
# reduction
# ---------------------------------------------------------------------------

def _objective_cut(p, q, nb, cbo):
    """Raise each rate lower bound so that ``sum(z) >= cbo`` stays reachable."""
    qz = q[nb:]
    rest = qz.sum() - qz
    p[nb:] = np.maximum(p[nb:], cbo - rest)
    if np.any(p[nb:] > q[nb:] + 1e-12):
        return False
    p[nb:] = np.minimum(p[nb:], q[nb:])
    return True


def reduce(box: Box, cbo, inst: Instance, stats: Stats | None = None,
           rel_tol=1e-3, max_steps=20):
    """Shrink ``box`` without losing any feasible point with ``f >= cbo``.

    Returns the reduced box or ``None`` when nothing of interest remains.
    """
    nb = box.n_bool
    p, q = box.p.copy(), box.q.copy()
    if q[nb:].sum() < cbo or not _objective_cut(p, q, nb, cbo):
        return None
    if may_contain(p, q, cbo, inst, stats) is False:
        return None

    for i in range(nb):
        if p[i] == q[i]:
            continue
        face = q.copy()
        face[i] = 0.0
        if may_contain(p, face, cbo, inst, stats) is False:
            p[i] = 1.0
            continue
        face = p.copy()
        face[i] = 1.0
        if may_contain(face, q, cbo, inst, stats) is False:
            q[i] = 0.0

    if may_contain(p, q, cbo, inst, stats) is False:
        return None

    for k in range(nb, len(p)):
        lo, hi = p[k], q[k]
        if hi - lo <= 0:
            continue
        trial = p.copy()
        trial[k] = hi
        if may_contain(trial, q, cbo, inst, stats) is not False:
            continue
        width = hi - lo
        for _ in range(max_steps):
            if hi - lo <= rel_tol * width:
                break
            trial[k] = 0.5 * (lo + hi)
            if may_contain(trial, q, cbo, inst, stats) is False:
                hi = trial[k]
            else:
                lo = trial[k]
        q[k] = hi

    if q[nb:].sum() < cbo or not _objective_cut(p, q, nb, cbo):
        return None
    return Box(p, q, nb)


# ---------------------------------------------------------------------------
# bounding
# ---------------------------------------------------------------------------

def power_control(h, w, targets, noise):
    """Rescale the columns of ``w`` so every user's rate equals ``targets``.

    Beam directions are kept; the per-user power factors solve the linear
    system ``a_k G_kk = g_k (sum_{j != k} a_j G_kj + noise)``.  Returns
    ``None`` when no nonnegative solution with ``a <= 1`` exists, i.e. when
    the targets are not below the rates ``w`` already achieves.
    """
    gains = np.abs(np.asarray(h) @ w) ** 2
    g = np.expm1(np.asarray(targets, dtype=float))
    K = len(g)
    T = np.diag(np.diag(gains)) - g[:, None] * (gains - np.diag(np.diag(gains)))
    try:
        a = np.linalg.solve(T, g * noise)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(a)) or np.any(a < -1e-12) or np.any(a > 1 + 1e-9):
        return None
    return w * np.sqrt(np.clip(a, 0.0, 1.0))[None, :K]


def make_incumbent(w, x_sel, inst: Instance, floor=None, tol=INCUMBENT_TOL):
    """Turn a beamformer for selection ``x_sel`` into a verified incumbent.

    Inactive blocks are zeroed and the per-BS budget enforced exactly.  If
    the achieved rates overload a backhaul link, the rates are pulled back
    towards ``floor`` (defaulting to the SINR target) by power control,
    bisecting on how far to pull.  Returns ``None`` if the result fails any
    constraint at ``tol``.
    """
    prm, ch = inst.params, inst.channels
    B, M, K = inst.B, inst.M, inst.K
    x_sel = np.asarray(x_sel, dtype=float).reshape(B * K)
    w = soc_rotate(ch.h, w).reshape(B, M, K)
    w[x_sel.reshape(B, K)[:, None, :].repeat(M, axis=1) < 0.5] = 0.0
    w = w.reshape(B * M, K)

    per_bs = link_powers(w, B, M).reshape(B, K).sum(axis=1)
    if per_bs.max() > prm.power_budget:
        w = w * np.sqrt(prm.power_budget / per_bs.max())

    noise = prm.noise_power
    cap = prm.backhaul_cap * (1 - 1e-9)
    r = rates(ch.h, w, noise)
    if backhaul_all(x_sel, r).max() > cap:
        lo_rates = np.full(K, inst.rate_floor) if floor is None else \
            np.minimum(np.maximum(floor, inst.rate_floor), r)
        if backhaul_all(x_sel, lo_rates).max() > cap:
            return None
        best = power_control(ch.h, w, lo_rates, noise)
        if best is None:
            return None
        lo, hi = 0.0, 1.0
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            target = lo_rates + mid * (r - lo_rates)
            if backhaul_all(x_sel, target).max() > cap:
                hi = mid
                continue
            cand = power_control(ch.h, w, target, noise)
            if cand is None:
                hi = mid
            else:
                lo, best = mid, cand
        w = best
    r = rates(ch.h, w, noise)
    u = link_powers(w, B, M) * x_sel
    if check_feasible(w, x_sel, u, prm, ch, tol=tol):
        return None
    return Incumbent(w=w, x=x_sel, u=u, rates=r, objective=float(r.sum()))


def _better(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return b if b.objective > a.objective else a


def binary_search_feasible(u_star, box: Box, inst: Instance,
                           stats: Stats | None = None):
    """Round the relaxed soft powers to selections by a binary search on the
    number of active links; return the best verified incumbent."""
    K, N = inst.K, inst.n_links
    u_star = np.asarray(u_star, dtype=float)
    order = sorted(range(N), key=lambda i: (-u_star[i], i))
    z_floor = box.pz
    lo, hi = K, N
    best = None
    while lo <= hi:
        L = (lo + hi) // 2
        x_sel = np.zeros(N)
        x_sel[order[:L]] = 1.0
        status, w = solve_feasibility(x_sel, z_floor, inst, stats)
        if status == cones.OPTIMAL:
            best = _better(best, make_incumbent(w, x_sel, inst, z_floor))
            lo = L + 1
        else:
            hi = L - 1
    return best


def bound(box: Box, cbo, inst: Instance, stats: Stats | None = None):
    """Upper bound and (optional) incumbent for a reduced box.

    Returns ``(None, None)`` when the relaxation proves the box holds nothing
    better than ``cbo``.
    """
    prog = cones.build_bound_program(box, inst, cbo)
    sol = cones.solve(prog)
    if stats is not None:
        stats.socp_solves += 1
        stats.solver_failures += sol.status == cones.FAILURE
    if sol.status == cones.INFEASIBLE:
        return None, None
    if sol.status == cones.FAILURE:
        return box.upper_objective(), None

    upper = min(-sol.objective, box.upper_objective())
    best = binary_search_feasible(prog.var("u", sol.x), box, inst, stats)
    # the box's own top selection at its bottom rates passed the last
    # reduction probe, so it usually yields a point inside the box
    status, w = solve_feasibility(box.qx, box.pz, inst, stats)
    if status == cones.OPTIMAL:
        best = _better(best, make_incumbent(w, box.qx, inst, box.pz))
    return upper, best


def root_heuristic(inst: Instance, stats: Stats | None = None):
    """One-shot baseline: root relaxation followed by the rounding search."""
    try:
        root = compute_root_box(inst.params, inst.channels)
    except InfeasibleInstanceError:
        return None
    cbo = inst.K * inst.rate_floor
    prog = cones.build_bound_program(root, inst, cbo)
    sol = cones.solve(prog)
    if stats is not None:
        stats.socp_solves += 1
    if not sol.ok:
        return None
    return binary_search_feasible(prog.var("u", sol.x), root, inst, stats)


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

def solve_dbrb(inst: Instance, eps_rel=1e-3, eps_abs=1e-4, max_iter=100_000,
               time_limit=None, on_iteration=None, initial=None,
               on_incumbent=None) -> SolveResult:
    """Globally maximize the sum rate.

    Stops when the best upper bound is within ``eps_abs`` or ``eps_rel``
    (relative to ``max(1, |UB|)``) of the incumbent.  ``initial`` may carry
    a known feasible :class:`Incumbent`; it is re-verified before use.
    ``on_incumbent`` is called with every incumbent that is adopted.
    """
    t0 = time.perf_counter()
    stats = Stats()
    trace = []

    def elapsed_ms():
        return 1e3 * (time.perf_counter() - t0)

    def finish(status, incumbent, upper, lower, n):
        return SolveResult(incumbent, upper, lower, status, n, trace, stats,
                           time.perf_counter() - t0)

    cbo = inst.K * inst.rate_floor
    try:
        root = compute_root_box(inst.params, inst.channels)
    except InfeasibleInstanceError:
        return finish("infeasible", None, -math.inf, -math.inf, 0)

    incumbent = None
    if initial is not None and not check_feasible(
            initial.w, initial.x, initial.u, inst.params, inst.channels,
            tol=INCUMBENT_TOL):
        incumbent = initial
        cbo = max(cbo, initial.objective)
        if on_incumbent is not None:
            on_incumbent(incumbent)
    heap = []
    counter = 0
    settled = -math.inf

    def add(box, upper, created):
        nonlocal counter
        heapq.heappush(heap, (-upper, created, counter, Node(box, upper, created, counter)))
        counter += 1

    def record(n):
        ub = max(-heap[0][0] if heap else -math.inf, settled)
        if trace:
            ub = min(ub, trace[-1].ub)
        if incumbent is not None:
            ub = max(ub, cbo)
        row = TraceRow(n, ub, cbo, len(heap), stats.socp_solves,
                       stats.feas_solves, elapsed_ms())
        trace.append(row)
        if on_iteration is not None:
            on_iteration(row)
        return ub

    def consider(box, created, cap):
        nonlocal cbo, incumbent
        red = reduce(box, cbo, inst, stats)
        if red is None:
            return False
        upper, inc = bound(red, cbo, inst, stats)
        if upper is None:
            return False
        if inc is not None and inc.objective > cbo:
            cbo, incumbent = inc.objective, inc
            if on_incumbent is not None:
                on_incumbent(inc)
        upper = min(upper, cap)
        if upper >= cbo:
            add(red, upper, created)
        return True

    consider(root, 0, math.inf)
    ub = record(0)

    n = 0
    while True:
        if not heap:
            if incumbent is None:
                return finish("infeasible", None, -math.inf, -math.inf, n)
            status = "optimal" if ub - cbo <= max(eps_abs, eps_rel * max(1.0, abs(ub))) \
                else "exhausted"
            return finish(status, incumbent, ub, cbo, n)
        if incumbent is not None and (
                ub - cbo <= eps_abs or (ub - cbo) / max(1.0, abs(ub)) <= eps_rel):
            return finish("optimal", incumbent, ub, cbo, n)
        if n >= max_iter:
            return finish("iteration-limit", incumbent, ub,
                          cbo if incumbent is not None else -math.inf, n)
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            return finish("time-limit", incumbent, ub,
                          cbo if incumbent is not None else -math.inf, n)

        n += 1
        node = heapq.heappop(heap)[3]
        try:
            children = branch(node.box)
        except AtomBox:
            settled = max(settled, node.upper)
            children = ()
        old_cbo = cbo
        for child in children:
            consider(child, n, node.upper)
        if cbo > old_cbo:
            heap = [e for e in heap if e[3].upper >= cbo]
            heapq.heapify(heap)
        ub = record(n)


def write_trace_csv(trace, path, provenance=None):
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.writer(fh)
        writer.writerow(TRACE_FIELDS)
        for r in trace:
            writer.writerow([r.iteration, repr(float(r.ub)), repr(float(r.lb)),
                             r.live_boxes, r.socp_solves, r.feas_solves,
                             f"{r.elapsed_ms:.3f}"])
