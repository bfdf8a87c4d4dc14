"""Standard-form conic programs and the two SOCP subproblems.

A :class:`ConeProgram` is ``minimize c @ x`` subject to ``b - A @ x`` lying in
a product of zero, nonnegative and second-order cones, in the order given by
``cones``.  This is Clarabel's native form, which is the default backend;
cvxopt's ``conelp`` is available as an independent reference solver.

Both subproblem builders work in normalized units: channels are scaled by
``sqrt(P / (W N0))`` so that the noise power and each BS power budget equal 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .problem import Box, Instance

ZERO, NONNEG, SOC = "zero", "nonneg", "soc"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
FAILURE = "numerical-failure"


@dataclass
class ConeProgram:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: list
    variables: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = sum(d for _, d in self.cones)
        if self.A.shape != (rows, len(self.c)) or len(self.b) != rows:
            raise ValueError(
                f"inconsistent program: A {self.A.shape}, b {len(self.b)}, "
                f"cones {rows}, c {len(self.c)}")
        for kind, dim in self.cones:
            if kind not in (ZERO, NONNEG, SOC) or dim < 1:
                raise ValueError(f"bad cone ({kind}, {dim})")

    @property
    def num_vars(self):
        return len(self.c)

    def var(self, name, x):
        return np.asarray(x)[self.variables[name]]

    def to_dict(self):
        A = self.A.tocoo()
        return {
            "c": self.c.tolist(),
            "A": {"shape": list(A.shape), "rows": A.row.tolist(),
                  "cols": A.col.tolist(), "vals": A.data.tolist()},
            "b": self.b.tolist(),
            "cones": [[k, d] for k, d in self.cones],
            "variables": {k: [s.start, s.stop] for k, s in self.variables.items()},
        }

    @classmethod
    def from_dict(cls, doc):
        a = doc["A"]
        A = sp.csc_matrix((a["vals"], (a["rows"], a["cols"])), shape=a["shape"])
        return cls(np.asarray(doc["c"], dtype=float), A,
                   np.asarray(doc["b"], dtype=float),
                   [(k, int(d)) for k, d in doc["cones"]],
                   {k: slice(*v) for k, v in doc.get("variables", {}).items()})

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))


@dataclass
class ConeSolution:
    status: str
    x: np.ndarray | None
    objective: float
    iterations: int = 0
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    raw_status: str = ""

    @property
    def ok(self):
        return self.status == OPTIMAL


def cone_violation(prog: ConeProgram, x) -> float:
    """Largest violation of ``b - A x`` against its cones."""
    s = prog.b - prog.A @ x
    worst, i = 0.0, 0
    for kind, dim in prog.cones:
        blk = s[i:i + dim]
        if kind == ZERO:
            worst = max(worst, float(np.max(np.abs(blk))))
        elif kind == NONNEG:
            worst = max(worst, float(-np.min(blk)))
        else:
            worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]))
        i += dim
    return worst


def solve(prog: ConeProgram, tol=1e-8, backend="clarabel") -> ConeSolution:
    if backend == "clarabel":
        return _solve_clarabel(prog, tol)
    if backend == "cvxopt":
        return _solve_cvxopt(prog, tol)
    raise ValueError(f"unknown backend {backend!r}")


def _solve_clarabel(prog, tol):
    import clarabel

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = tol
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.max_iter = 200
    cone_types = {ZERO: clarabel.ZeroConeT, NONNEG: clarabel.NonnegativeConeT,
                  SOC: clarabel.SecondOrderConeT}
    cones = [cone_types[k](d) for k, d in prog.cones]
    n = prog.num_vars
    P = sp.csc_matrix((n, n))
    try:
        sol = clarabel.DefaultSolver(P, prog.c, prog.A, prog.b, cones,
                                     settings).solve()
    except Exception as exc:  # clarabel raises on malformed data
        return ConeSolution(FAILURE, None, float("nan"), raw_status=repr(exc))

    raw = str(sol.status)
    x = np.asarray(sol.x, dtype=float)
    stats = dict(iterations=sol.iterations, primal_residual=sol.r_prim,
                 dual_residual=sol.r_dual, raw_status=raw)
    if raw in ("Solved", "AlmostSolved"):
        if np.all(np.isfinite(x)) and cone_violation(prog, x) <= max(1e-6, 100 * tol):
            return ConeSolution(OPTIMAL, x, float(prog.c @ x), **stats)
        return ConeSolution(FAILURE, x, float("nan"), **stats)
    if raw == "PrimalInfeasible":
        return ConeSolution(INFEASIBLE, None, float("inf"), **stats)
    return ConeSolution(FAILURE, None, float("nan"), **stats)


def _solve_cvxopt(prog, tol):
    import cvxopt
    from cvxopt import solvers

    A = prog.A.tocsr()
    zero_rows, lin_rows, soc_rows, soc_dims = [], [], [], []
    i = 0
    for kind, dim in prog.cones:
        rows = list(range(i, i + dim))
        if kind == ZERO:
            zero_rows += rows
        elif kind == NONNEG:
            lin_rows += rows
        else:
            soc_rows += rows
            soc_dims.append(dim)
        i += dim
    g_rows = lin_rows + soc_rows

    def spmat(m):
        m = m.tocoo()
        return cvxopt.spmatrix(m.data.tolist(), m.row.tolist(), m.col.tolist(),
                               size=m.shape)

    G = spmat(A[g_rows]) if g_rows else None
    h = cvxopt.matrix(prog.b[g_rows]) if g_rows else None
    kwargs = {}
    if zero_rows:
        kwargs = {"A": spmat(A[zero_rows]), "b": cvxopt.matrix(prog.b[zero_rows])}
    dims = {"l": len(lin_rows), "q": soc_dims, "s": []}
    opts = {"show_progress": False, "abstol": tol, "reltol": tol,
            "feastol": tol, "maxiters": 200}
    try:
        res = solvers.conelp(cvxopt.matrix(prog.c), G, h, dims, options=opts,
                             **kwargs)
    except (ValueError, ArithmeticError) as exc:
        return ConeSolution(FAILURE, None, float("nan"), raw_status=repr(exc))
    raw = res["status"]
    stats = dict(iterations=res["iterations"],
                 primal_residual=res.get("primal infeasibility") or float("nan"),
                 dual_residual=res.get("dual infeasibility") or float("nan"),
                 raw_status=raw)
    if raw == "optimal":
        x = np.asarray(res["x"], dtype=float).ravel()
        return ConeSolution(OPTIMAL, x, float(prog.c @ x), **stats)
    if raw == "primal infeasible":
        return ConeSolution(INFEASIBLE, None, float("inf"), **stats)
    return ConeSolution(FAILURE, None, float("nan"), **stats)


class ProgramBuilder:
    """Collects cone blocks row by row.

    Each row is an affine expression ``(cols, vals, const)`` meaning
    ``vals @ x[cols] + const``; the block of rows must lie in its cone.
    """

    def __init__(self):
        self.variables = {}
        self.n = 0
        self._blocks = []

    def add_var(self, name, size):
        self.variables[name] = slice(self.n, self.n + size)
        self.n += size
        return np.arange(self.n - size, self.n)

    def add(self, kind, exprs):
        if exprs:
            if kind != SOC and self._blocks and self._blocks[-1][0] == kind:
                self._blocks[-1][1].extend(exprs)
            else:
                self._blocks.append((kind, list(exprs)))

    def build(self, c) -> ConeProgram:
        rows, cols, vals, b, cones = [], [], [], [], []
        r = 0
        for kind, exprs in self._blocks:
            for ec, ev, const in exprs:
                ec = np.atleast_1d(ec)
                rows.append(np.full(len(ec), r))
                cols.append(ec)
                vals.append(-np.asarray(ev, dtype=float) * np.ones(len(ec)))
                b.append(const)
                r += 1
            cones.append((kind, len(exprs)))
        A = sp.csc_matrix(
            (np.concatenate(vals) if vals else [],
             (np.concatenate(rows) if rows else [],
              np.concatenate(cols) if cols else [])),
            shape=(r, self.n))
        return ConeProgram(np.asarray(c, dtype=float), A, np.asarray(b, dtype=float),
                           cones, dict(self.variables))


def realify(h):
    """Real form of the complex linear map ``w -> h @ w``.

    ``w`` is stored as interleaved ``(re, im)`` pairs; the returned ``(2, 2n)``
    matrix gives ``(Re(h w), Im(h w))``.
    """
    h = np.asarray(h, dtype=complex)
    out = np.empty((2, 2 * h.size))
    out[0, 0::2], out[0, 1::2] = h.real, -h.imag
    out[1, 0::2], out[1, 1::2] = h.imag, h.real
    return out


def complex_to_real(w):
    w = np.asarray(w, dtype=complex)
    out = np.empty(2 * w.size)
    out[0::2], out[1::2] = w.real.ravel(), w.imag.ravel()
    return out


def real_to_complex(v):
    v = np.asarray(v, dtype=float)
    return v[0::2] + 1j * v[1::2]


def envelope_phi(x, z, box: Box, b: int, num_users: int) -> float:
    """McCormick underestimator of ``sum_k x_{b,k} z_k`` for BS ``b``."""
    K = num_users
    sl = slice(b * K, (b + 1) * K)
    x = np.asarray(x, dtype=float).reshape(-1)[sl]
    z = np.asarray(z, dtype=float)
    xl, xu = box.px[sl], box.qx[sl]
    zl, zu = box.pz, box.qz
    lower = np.sum(zl * x + xl * z - xl * zl)
    upper = np.sum(zu * x + xu * z - xu * zu)
    return float(max(lower, upper))


class _Layout:
    """Per-instance realified channel data shared by both builders."""

    def __init__(self, inst: Instance):
        self.inst = inst
        B, M, K = inst.B, inst.M, inst.K
        self.n = B * M
        hn = inst.h_normalized
        # forms[k, j]: Re/Im of h_k w_j over the (re, im) entries of w_j
        self.forms = np.stack([realify(hn[k]) for k in range(K)])

    def w_cols(self, w_idx, j):
        return w_idx[2 * self.n * j: 2 * self.n * (j + 1)]

    def link_cols(self, w_idx, b, k):
        M = self.inst.M
        base = 2 * self.n * k + 2 * M * b
        return w_idx[base: base + 2 * M]

    def rate_socs(self, builder, w_idx, gains):
        """``Re(h_k w_k) >= sqrt(g_k (sum_{j!=k} |h_k w_j|^2 + 1))`` and
        ``Im(h_k w_k) = 0`` for every user."""
        K = self.inst.K
        zero_rows = []
        for k in range(K):
            form = self.forms[k]
            own = self.w_cols(w_idx, k)
            zero_rows.append((own, form[1], 0.0))
            sg = np.sqrt(max(gains[k], 0.0))
            rows = [(own, form[0], 0.0)]
            for j in range(K):
                if j != k:
                    cols = self.w_cols(w_idx, j)
                    rows.append((cols, sg * form[0], 0.0))
                    rows.append((cols, sg * form[1], 0.0))
            rows.append((np.array([], dtype=int), [], sg))
            builder.add(SOC, rows)
        builder.add(ZERO, zero_rows)


_layouts = {}


def layout_for(inst: Instance) -> _Layout:
    key = id(inst)
    lay = _layouts.get(key)
    if lay is None or lay.inst is not inst:
        if len(_layouts) > 64:
            _layouts.clear()
        lay = _layouts[key] = _Layout(inst)
    return lay


def _rate_gains(inst: Instance, z_floor):
    # the QoS cone is dominated by the rate cone whenever exp(z) - 1 >= gamma0,
    # so a single cone with the larger coefficient encodes both
    return np.maximum(np.expm1(np.asarray(z_floor, dtype=float)),
                      inst.params.sinr_target)


def build_feasibility_program(x_sel, z_floor, inst: Instance) -> ConeProgram:
    """Find ``(w, u)`` with selection ``x_sel`` fixed and rates at least
    ``z_floor``; zero objective.  Variables ``w`` (interleaved re/im, user
    major) and ``u`` (b-major)."""
    B, M, K = inst.B, inst.M, inst.K
    lay = layout_for(inst)
    x_sel = np.asarray(x_sel, dtype=float).reshape(B * K)
    bld = ProgramBuilder()
    w_idx = bld.add_var("w", 2 * lay.n * K)
    u_idx = bld.add_var("u", B * K)

    lay.rate_socs(bld, w_idx, _rate_gains(inst, z_floor))
    off = []
    for b in range(B):
        for k in range(K):
            i = b * K + k
            if x_sel[i] > 0.5:
                wc = lay.link_cols(w_idx, b, k)
                rows = [(np.array([u_idx[i]]), [0.5], 0.5)]
                rows += [(np.array([c]), [1.0], 0.0) for c in wc]
                rows.append((np.array([u_idx[i]]), [-0.5], 0.5))
                bld.add(SOC, rows)
            else:
                off += [(np.array([c]), [1.0], 0.0)
                        for c in lay.link_cols(w_idx, b, k)]
                off.append((np.array([u_idx[i]]), [1.0], 0.0))
    bld.add(ZERO, off)
    bld.add(NONNEG, [(u_idx[b * K:(b + 1) * K], -np.ones(K), 1.0)
                     for b in range(B)])
    return bld.build(np.zeros(bld.n))


def build_bound_program(box: Box, inst: Instance, cbo: float) -> ConeProgram:
    """Convex relaxation over ``box``: maximize ``sum z`` (as minimize
    ``-sum z``) with continuous selection variables, the rate cone at the
    box's lower rates, McCormick backhaul cuts and the objective bracket."""
    B, M, K = inst.B, inst.M, inst.K
    if box.n_bool != B * K or len(box.p) != B * K + K:
        raise ValueError("box dimension does not match the instance")
    lay = layout_for(inst)
    xl, xu, zl, zu = box.px, box.qx, box.pz, box.qz
    C = inst.params.backhaul_cap

    bld = ProgramBuilder()
    w_idx = bld.add_var("w", 2 * lay.n * K)
    x_idx = bld.add_var("x", B * K)
    u_idx = bld.add_var("u", B * K)
    z_idx = bld.add_var("z", K)

    lay.rate_socs(bld, w_idx, _rate_gains(inst, zl))

    fixed, bounds = [], []
    for b in range(B):
        for k in range(K):
            i = b * K + k
            xi, ui = np.array([x_idx[i]]), np.array([u_idx[i]])
            wc = lay.link_cols(w_idx, b, k)
            if xu[i] == 0:
                fixed.append((xi, [1.0], 0.0))
                fixed.append((ui, [1.0], 0.0))
                fixed += [(np.array([c]), [1.0], 0.0) for c in wc]
                continue
            if xl[i] == xu[i]:
                fixed.append((xi, [1.0], -xl[i]))
            else:
                bounds.append((xi, [1.0], -xl[i]))
                bounds.append((xi, [-1.0], xu[i]))
            rows = [(np.array([x_idx[i], u_idx[i]]), [0.5, 0.5], 0.0)]
            rows += [(np.array([c]), [1.0], 0.0) for c in wc]
            rows.append((np.array([x_idx[i], u_idx[i]]), [0.5, -0.5], 0.0))
            bld.add(SOC, rows)
    for k in range(K):
        zk = np.array([z_idx[k]])
        if zl[k] == zu[k]:
            fixed.append((zk, [1.0], -zl[k]))
        else:
            bounds.append((zk, [1.0], -zl[k]))
            bounds.append((zk, [-1.0], zu[k]))
    bld.add(ZERO, fixed)

    lin = list(bounds)
    for b in range(B):
        lin.append((u_idx[b * K:(b + 1) * K], -np.ones(K), 1.0))
    for k in range(K):
        lin.append((x_idx[k::K][:B], np.ones(B), -1.0))
    lin.append((z_idx, np.ones(K), -float(cbo)))
    lin.append((z_idx, -np.ones(K), float(zu.sum())))
    for b in range(B):
        sl = slice(b * K, (b + 1) * K)
        cols = np.concatenate([x_idx[sl], z_idx])
        lo = np.concatenate([zl, xl[sl]])
        hi = np.concatenate([zu, xu[sl]])
        lin.append((cols, -lo, C + float(xl[sl] @ zl)))
        lin.append((cols, -hi, C + float(xu[sl] @ zu)))
    bld.add(NONNEG, lin)

    c = np.zeros(bld.n)
    c[z_idx] = -1.0
    return bld.build(c)


def beamformer_from_solution(prog: ConeProgram, x, inst: Instance):
    """Physical-unit ``(B*M, K)`` beamformer from a program solution."""
    w = real_to_complex(prog.var("w", x)).reshape(inst.K, inst.B * inst.M).T
    return w * np.sqrt(inst.params.power_budget)
