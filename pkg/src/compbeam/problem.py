"""Physical quantities and constraints of the joint beamforming / link
selection problem.

Conventions shared by every module:

* ``w`` is a complex ``(B*M, K)`` matrix; column ``k`` stacks the per-BS
  beamformers ``w_{b,k}`` in blocks of ``M`` rows.
* ``x`` and ``u`` are length ``B*K`` vectors in b-major order, i.e. entry
  ``b*K + k`` belongs to link ``(b, k)``.
* Rates are natural-log rates in nats per channel use.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .scenario import ChannelSet, SystemParams


class InfeasibleInstanceError(ValueError):
    """The SINR target cannot be met even with every BS at full power."""


@dataclass(frozen=True, eq=False)
class Instance:
    params: SystemParams
    channels: ChannelSet

    def __post_init__(self):
        p, c = self.params, self.channels
        if (c.num_bs, c.antennas_per_bs, c.num_users) != (
                p.num_bs, p.antennas_per_bs, p.num_users):
            raise ValueError("channel dimensions do not match params")

    @property
    def B(self):
        return self.params.num_bs

    @property
    def M(self):
        return self.params.antennas_per_bs

    @property
    def K(self):
        return self.params.num_users

    @property
    def n_links(self):
        return self.B * self.K

    @property
    def h(self):
        return self.channels.h

    @cached_property
    def h_normalized(self):
        """Channels scaled so that noise power and per-BS budget are both 1."""
        p = self.params
        return self.h * np.sqrt(p.power_budget / p.noise_power)

    @property
    def rate_floor(self) -> float:
        return float(np.log1p(self.params.sinr_target))


@dataclass(frozen=True)
class Box:
    """Hyper-rectangle ``[p, q]``; the first ``n_bool`` coordinates are the
    link-selection variables and stay in {0, 1} at both vertices."""

    p: np.ndarray
    q: np.ndarray
    n_bool: int

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).copy()
        q = np.asarray(self.q, dtype=float).copy()
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError("box vertices must be 1-D arrays of equal shape")
        if np.any(p > q):
            raise ValueError("box lower vertex exceeds upper vertex")
        nb = self.n_bool
        if not (np.all(np.isin(p[:nb], (0.0, 1.0)))
                and np.all(np.isin(q[:nb], (0.0, 1.0)))):
            raise ValueError("Boolean box coordinates must be 0 or 1")
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def px(self):
        return self.p[:self.n_bool]

    @property
    def qx(self):
        return self.q[:self.n_bool]

    @property
    def pz(self):
        return self.p[self.n_bool:]

    @property
    def qz(self):
        return self.q[self.n_bool:]

    @property
    def bool_fixed(self) -> bool:
        return bool(np.all(self.px == self.qx))

    def upper_objective(self) -> float:
        return float(self.qz.sum())

    def lower_objective(self) -> float:
        return float(self.pz.sum())

    def contains(self, s, tol=0.0) -> bool:
        s = np.asarray(s, dtype=float)
        return bool(np.all(s >= self.p - tol) and np.all(s <= self.q + tol))


@dataclass
class Incumbent:
    w: np.ndarray
    x: np.ndarray
    u: np.ndarray
    rates: np.ndarray
    objective: float


@dataclass(frozen=True)
class Violation:
    constraint: str
    index: tuple
    margin: float


def sinrs(h, w, noise):
    """All user SINRs for channel rows ``h`` (K, n) and beamformers ``w``."""
    g = np.abs(np.asarray(h) @ np.asarray(w)) ** 2
    signal = np.diag(g)
    interference = g.sum(axis=1) - signal
    return signal / (interference + noise)


def sinr(h, w, k, noise):
    return float(sinrs(h, w, noise)[k])


def rates(h, w, noise):
    return np.log1p(sinrs(h, w, noise))


def rate(h, w, k, noise):
    return float(np.log1p(sinr(h, w, k, noise)))


def backhaul_usage(x, rate_vec, b, num_users=None):
    rate_vec = np.asarray(rate_vec, dtype=float)
    K = len(rate_vec) if num_users is None else num_users
    row = np.asarray(x, dtype=float).reshape(-1, K)[b]
    return float(row @ rate_vec)


def backhaul_all(x, rate_vec):
    rate_vec = np.asarray(rate_vec, dtype=float)
    return np.asarray(x, dtype=float).reshape(-1, len(rate_vec)) @ rate_vec


def link_powers(w, B, M):
    """``||w_{b,k}||^2`` in b-major order."""
    w = np.asarray(w)
    K = w.shape[1]
    return (np.abs(w.reshape(B, M, K)) ** 2).sum(axis=1).reshape(B * K)


def check_feasible(w, x, u, params: SystemParams, channels: ChannelSet,
                   tol=1e-6):
    """Report every violated constraint of the original problem.

    Power and backhaul are checked relative to their budgets, SINR
    absolutely; an empty list means feasible at ``tol``.
    """
    B, M, K = params.num_bs, params.antennas_per_bs, params.num_users
    w = np.asarray(w, dtype=complex).reshape(B * M, K)
    x = np.asarray(x, dtype=float).reshape(B * K)
    u = np.asarray(u, dtype=float).reshape(B * K)
    out = []

    gam = sinrs(channels.h, w, params.noise_power)
    r = np.log1p(gam)
    for b, used in enumerate(backhaul_all(x, r)):
        margin = params.backhaul_cap * (1 + tol) - used
        if margin < 0:
            out.append(Violation("backhaul", (b,), float(margin)))
    for k in range(K):
        margin = gam[k] - (params.sinr_target - tol)
        if margin < 0:
            out.append(Violation("sinr", (k,), float(margin)))
    pw = link_powers(w, B, M)
    slack = x * u + tol * params.power_budget - pw
    for i in np.flatnonzero(slack < 0):
        out.append(Violation("soft_power", divmod(int(i), K), float(slack[i])))
    for b, total in enumerate(u.reshape(B, K).sum(axis=1)):
        margin = params.power_budget * (1 + tol) - total
        if margin < 0:
            out.append(Violation("power", (b,), float(margin)))
    if np.any(u < -tol * params.power_budget):
        i = int(np.argmin(u))
        out.append(Violation("soft_power_sign", divmod(i, K), float(u[i])))
    served = x.reshape(B, K).sum(axis=0)
    for k in np.flatnonzero(served < 1 - tol):
        out.append(Violation("connectivity", (int(k),), float(served[k] - 1)))
    dist = np.abs(x - np.round(x))
    for i in np.flatnonzero((dist > tol) | (np.round(x) < 0) | (np.round(x) > 1)):
        out.append(Violation("boolean", divmod(int(i), K), -float(dist[i])))
    return out


def soc_rotate(h, w):
    """Rotate each column so that ``h_k w_k`` is real and nonnegative."""
    w = np.array(w, dtype=complex)
    d = np.einsum("kn,nk->k", np.asarray(h), w)
    mag = np.abs(d)
    phase = np.ones_like(d)
    nz = mag > 0
    phase[nz] = np.conj(d[nz]) / mag[nz]
    return w * phase[None, :]


def compute_root_box(params: SystemParams, channels: ChannelSet) -> Box:
    B, K = params.num_bs, params.num_users
    lo = np.full(K, np.log1p(params.sinr_target))
    gain = np.sum(np.abs(channels.h) ** 2, axis=1)
    hi = np.minimum(B * params.backhaul_cap,
                    np.log1p(B * params.power_budget * gain / params.noise_power))
    if np.any(lo > hi):
        bad = np.flatnonzero(lo > hi).tolist()
        raise InfeasibleInstanceError(
            f"SINR target unreachable for users {bad} even at full power")
    return Box(np.concatenate([np.zeros(B * K), lo]),
               np.concatenate([np.ones(B * K), hi]), B * K)


def objective(box_point, n_bool) -> float:
    return float(np.sum(np.asarray(box_point)[n_bool:]))
