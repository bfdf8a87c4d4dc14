"""Reproducible multicell downlink instances.

Geometry, log-normal shadowing and Rayleigh fading are drawn from three
independent substreams of a PCG64 generator seeded with
``SeedSequence(seed).spawn(3)``: stream 0 places users, stream 1 draws
shadowing, stream 2 draws fast fading.  The same ``(params, seed)`` always
yields the same channels on every platform numpy supports.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


def dbm_to_watts(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0 - 3.0)


def watts_to_dbm(watts):
    return 10.0 * np.log10(np.asarray(watts, dtype=float)) + 30.0


@dataclass(frozen=True)
class SystemParams:
    """Scalar system constants, all in SI / internal units.

    ``backhaul_cap`` and every rate are in nats per channel use, i.e. the
    physical value in nats/s divided by ``bandwidth``.
    """

    num_bs: int = 3
    antennas_per_bs: int = 4
    num_users: int = 6
    power_budget: float = float(dbm_to_watts(46.0))
    backhaul_cap: float = 20.0
    sinr_target: float = 1.0
    bandwidth: float = 10e6
    noise_density: float = float(dbm_to_watts(-174.0))
    inter_site_distance: float = 1.0
    shadowing_std: float = 8.0
    min_distance: float = 0.035

    def __post_init__(self):
        for name in ("num_bs", "antennas_per_bs", "num_users"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("power_budget", "backhaul_cap", "sinr_target",
                     "bandwidth", "noise_density", "inter_site_distance"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value!r}")
        if self.shadowing_std < 0:
            raise ValueError("shadowing_std must be nonnegative")

    @property
    def noise_power(self) -> float:
        return noise_power(self.noise_density, self.bandwidth)

    @property
    def num_links(self) -> int:
        return self.num_bs * self.num_users

    def replace(self, **changes) -> "SystemParams":
        values = asdict(self)
        values.update(changes)
        return SystemParams(**values)


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """Channel rows ``h[k] = [h_{1,k}, ..., h_{B,k}]`` of length ``B*M``.

    Geometry fields are optional so hand-built channels can be wrapped too.
    """

    h: np.ndarray
    num_bs: int
    antennas_per_bs: int
    seed: int | None = None
    bs_xy: np.ndarray | None = None
    user_xy: np.ndarray | None = None
    shadowing_db: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.h, dtype=complex))
        object.__setattr__(self, "h", h)
        if h.shape[1] != self.num_bs * self.antennas_per_bs:
            raise ValueError(
                f"channel rows have length {h.shape[1]}, expected "
                f"{self.num_bs * self.antennas_per_bs}")
        if not np.all(np.isfinite(h)):
            raise ValueError("channel entries must be finite")
        if np.any(np.linalg.norm(h, axis=1) == 0):
            raise ValueError("degenerate channel: some user has h_k = 0")

    @property
    def num_users(self) -> int:
        return self.h.shape[0]

    def block(self, b: int, k: int) -> np.ndarray:
        m = self.antennas_per_bs
        return self.h[k, b * m:(b + 1) * m]

    def __eq__(self, other):
        if not isinstance(other, ChannelSet):
            return NotImplemented
        return (self.num_bs == other.num_bs
                and self.antennas_per_bs == other.antennas_per_bs
                and self.seed == other.seed
                and np.array_equal(self.h, other.h))


def pathloss_db(distance_km):
    """Macro-cell pathloss ``128.1 + 37.6 log10(d)`` with ``d`` in km."""
    d = np.asarray(distance_km, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("distance must be positive")
    out = 128.1 + 37.6 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def noise_power(noise_density, bandwidth):
    if not (noise_density > 0 and bandwidth > 0):
        raise ValueError("noise density and bandwidth must be positive")
    return noise_density * bandwidth


def bs_layout(num_bs: int, inter_site_distance: float):
    """BS coordinates (km) and the radius of the coverage disk.

    BSs sit on a regular polygon of side ``inter_site_distance`` centred at
    the origin (an equilateral triangle for three BSs); users are dropped in
    the circumscribed disk.  A single BS sits at the origin and covers a
    disk of radius ``d / 2``.
    """
    d = inter_site_distance
    if num_bs == 1:
        return np.zeros((1, 2)), d / 2.0
    radius = d / (2.0 * math.sin(math.pi / num_bs))
    angles = np.pi / 2 + 2 * np.pi * np.arange(num_bs) / num_bs
    return radius * np.column_stack([np.cos(angles), np.sin(angles)]), radius


def _streams(seed: int):
    children = np.random.SeedSequence(seed).spawn(3)
    return [np.random.Generator(np.random.PCG64(s)) for s in children]


def generate_scenario(params: SystemParams, seed: int) -> ChannelSet:
    geo_rng, shadow_rng, fading_rng = _streams(seed)
    B, M, K = params.num_bs, params.antennas_per_bs, params.num_users

    bs_xy, radius = bs_layout(B, params.inter_site_distance)
    r = radius * np.sqrt(geo_rng.uniform(size=K))
    theta = geo_rng.uniform(0.0, 2 * np.pi, size=K)
    user_xy = np.column_stack([r * np.cos(theta), r * np.sin(theta)])

    dist = np.linalg.norm(bs_xy[:, None, :] - user_xy[None, :, :], axis=2)
    dist = np.maximum(dist, params.min_distance)
    shadowing = shadow_rng.normal(0.0, params.shadowing_std, size=(B, K))
    gain = np.sqrt(10.0 ** (-(pathloss_db(dist) + shadowing) / 10.0))

    g = (fading_rng.standard_normal((B, K, M))
         + 1j * fading_rng.standard_normal((B, K, M))) / np.sqrt(2.0)
    blocks = gain[:, :, None] * g
    h = np.transpose(blocks, (1, 0, 2)).reshape(K, B * M)
    return ChannelSet(h=h, num_bs=B, antennas_per_bs=M, seed=seed,
                      bs_xy=bs_xy, user_xy=user_xy, shadowing_db=shadowing)


def scenario_to_dict(params: SystemParams, channels: ChannelSet) -> dict:
    def pairs(a):
        return None if a is None else np.asarray(a).tolist()

    return {
        "params": asdict(params),
        "seed": channels.seed,
        "bs_xy_km": pairs(channels.bs_xy),
        "user_xy_km": pairs(channels.user_xy),
        "shadowing_db": pairs(channels.shadowing_db),
        "channels": [[[z.real, z.imag] for z in row] for row in channels.h],
    }


def scenario_from_dict(doc: dict):
    params = SystemParams(**doc["params"])
    raw = np.asarray(doc["channels"], dtype=float)
    h = raw[..., 0] + 1j * raw[..., 1]

    def arr(key):
        v = doc.get(key)
        return None if v is None else np.asarray(v, dtype=float)

    channels = ChannelSet(h=h, num_bs=params.num_bs,
                          antennas_per_bs=params.antennas_per_bs,
                          seed=doc.get("seed"), bs_xy=arr("bs_xy_km"),
                          user_xy=arr("user_xy_km"),
                          shadowing_db=arr("shadowing_db"))
    if channels.num_users != params.num_users:
        raise ValueError("channel count does not match num_users")
    return params, channels


def dump_scenario(params: SystemParams, channels: ChannelSet, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(params, channels),
                                     indent=1))


def load_scenario(path):
    return scenario_from_dict(json.loads(Path(path).read_text()))
