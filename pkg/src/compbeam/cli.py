"""Experiment configuration and the ``compbeam`` command line.

Config files are JSON objects whose keys carry their unit in the suffix
(``power_dbm``, ``backhaul_mnats_per_s`` ...).  Units are converted once, in
:meth:`ExperimentConfig.params`.

Exit codes: 0 success, 1 other error, 2 infeasible, 3 iteration or time
limit, 4 oracle divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .dbrb import root_heuristic, solve_dbrb, write_trace_csv
from .oracle import OracleCostError, oracle_vs_dbrb
from .problem import Instance, backhaul_all, check_feasible
from .scenario import (SystemParams, dbm_to_watts, dump_scenario,
                       generate_scenario)

MODES = ("solve", "sweep", "oracle-check")
EXIT_OK, EXIT_OTHER, EXIT_INFEASIBLE, EXIT_LIMIT, EXIT_DIVERGED = 0, 1, 2, 3, 4

DEFAULT_SWEEP = [100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0]
# per-mode defaults for the network size; solve uses the full-size layout
MODE_DEFAULTS = {
    "solve": {"num_bs": 3, "antennas_per_bs": 4, "num_users": 6, "seeds": [0]},
    "sweep": {"num_bs": 3, "antennas_per_bs": 2, "num_users": 3,
              "seeds": list(range(20))},
    "oracle-check": {"num_bs": 2, "antennas_per_bs": 2, "num_users": 2,
                     "seeds": [0], "epsilon_abs": 1e-2},
}
UNIT_STEMS = {
    "power": "power_dbm",
    "noise": "noise_dbm_per_hz",
    "backhaul": "backhaul_mnats_per_s",
    "sinr_target": "sinr_target_db",
    "bandwidth": "bandwidth_mhz",
    "inter_site_distance": "inter_site_distance_km",
    "shadowing_std": "shadowing_std_db",
    "min_distance": "min_distance_km",
    "time_limit": "time_limit_s",
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str
    num_bs: int = 3
    antennas_per_bs: int = 4
    num_users: int = 6
    power_dbm: float = 46.0
    noise_dbm_per_hz: float = -174.0
    backhaul_mnats_per_s: float = 200.0
    backhaul_sweep_mnats_per_s: list = field(default_factory=lambda: list(DEFAULT_SWEEP))
    sinr_target_db: float = 0.0
    bandwidth_mhz: float = 10.0
    inter_site_distance_km: float = 1.0
    shadowing_std_db: float = 8.0
    min_distance_km: float = 0.035
    seeds: list = field(default_factory=lambda: [0])
    epsilon_rel: float = 1e-3
    epsilon_abs: float = 1e-4
    max_iter: int = 100_000
    time_limit_s: float | None = None
    grid_step: float = 0.05
    output_dir: str = "out"

    def params(self, backhaul_mnats_per_s=None) -> SystemParams:
        bw = self.bandwidth_mhz * 1e6
        cap = self.backhaul_mnats_per_s if backhaul_mnats_per_s is None \
            else backhaul_mnats_per_s
        return SystemParams(
            num_bs=self.num_bs,
            antennas_per_bs=self.antennas_per_bs,
            num_users=self.num_users,
            power_budget=float(dbm_to_watts(self.power_dbm)),
            backhaul_cap=cap * 1e6 / bw,
            sinr_target=10.0 ** (self.sinr_target_db / 10.0),
            bandwidth=bw,
            noise_density=float(dbm_to_watts(self.noise_dbm_per_hz)),
            inter_site_distance=self.inter_site_distance_km,
            shadowing_std=self.shadowing_std_db,
            min_distance=self.min_distance_km,
        )

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def parse_config(doc: dict, mode: str | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = dict(doc)
    file_mode = doc.pop("mode", None)
    if mode is not None and file_mode is not None and file_mode != mode:
        raise ConfigError(f"config mode {file_mode!r} does not match command {mode!r}")
    mode = mode or file_mode
    if mode is None:
        raise ConfigError("config is missing 'mode' (one of solve, sweep, oracle-check)")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")

    known = {f.name for f in fields(ExperimentConfig)} - {"mode"}
    for key in doc:
        if key in known:
            continue
        for stem, proper in UNIT_STEMS.items():
            if key.startswith(stem):
                raise ConfigError(
                    f"unit-suffix mismatch for {key!r}: use {proper!r}")
        raise ConfigError(f"unknown config key {key!r}")

    values = dict(MODE_DEFAULTS[mode])
    values.update(doc)
    try:
        cfg = ExperimentConfig(mode=mode, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    for name in ("num_bs", "antennas_per_bs", "num_users", "max_iter"):
        if int(getattr(cfg, name)) != getattr(cfg, name) or getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be a positive integer")
    if not cfg.seeds or not all(isinstance(s, int) for s in cfg.seeds):
        raise ConfigError("seeds must be a nonempty list of integers")
    try:
        cfg.params()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path, mode: str | None = None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, mode)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

def _to_mnats(x, bw):
    return np.asarray(x, dtype=float) * bw / 1e6


def _provenance(cfg, seed):
    return f"compbeam {__version__} config={cfg.digest()} seed={seed}"


def _exit_for(status):
    return {"optimal": EXIT_OK, "infeasible": EXIT_INFEASIBLE,
            "iteration-limit": EXIT_LIMIT, "time-limit": EXIT_LIMIT}.get(status, EXIT_OTHER)


def _finite(v):
    return v if v is not None and math.isfinite(v) else None


def run_solve(cfg: ExperimentConfig, out_dir=None) -> int:
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    params = cfg.params()
    channels = generate_scenario(params, seed)
    inst = Instance(params, channels)
    dump_scenario(params, channels, out / "scenario.json")

    res = solve_dbrb(inst, eps_rel=cfg.epsilon_rel, eps_abs=cfg.epsilon_abs,
                     max_iter=cfg.max_iter, time_limit=cfg.time_limit_s)
    write_trace_csv(res.trace, out / "trace.csv", _provenance(cfg, seed))

    bw = params.bandwidth
    if res.incumbent is not None:
        inc = res.incumbent
        report = check_feasible(inc.w, inc.x, inc.u, params, channels, tol=1e-6)
        solution = {
            "w": [[[z.real, z.imag] for z in row] for row in inc.w],
            "x": inc.x.astype(int).tolist(),
            "u_watts": inc.u.tolist(),
            "rates_mnats_per_s": _to_mnats(inc.rates, bw).tolist(),
            "backhaul_usage_mnats_per_s":
                _to_mnats(backhaul_all(inc.x, inc.rates), bw).tolist(),
            "sum_rate_mnats_per_s": float(_to_mnats(inc.objective, bw)),
            "sum_rate_nats_per_use": inc.objective,
            "feasibility_violations": [asdict(v) for v in report],
        }
        (out / "solution.json").write_text(json.dumps(solution, indent=1))

    summary = {
        "status": res.status,
        "seed": seed,
        "upper_nats_per_use": _finite(res.upper),
        "lower_nats_per_use": _finite(res.lower) if res.incumbent else None,
        "gap_nats_per_use": _finite(res.gap) if res.incumbent else None,
        "relative_gap": _finite(res.relative_gap) if res.incumbent else None,
        "upper_mnats_per_s": _finite(float(_to_mnats(res.upper, bw))),
        "lower_mnats_per_s": float(_to_mnats(res.lower, bw)) if res.incumbent else None,
        "iterations": res.iterations,
        "socp_solves": res.stats.socp_solves,
        "feas_solves": res.stats.feas_solves,
        "solver_failures": res.stats.solver_failures,
        "wall_time_s": res.wall_time,
        "config": asdict(cfg),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return _exit_for(res.status)


def _sweep_cell(args):
    cfg, cap, seed = args
    params = cfg.params(cap)
    inst = Instance(params, generate_scenario(params, seed))
    row = {"backhaul": cap, "seed": seed}
    try:
        heur = root_heuristic(inst)
        res = solve_dbrb(inst, eps_rel=cfg.epsilon_rel, eps_abs=cfg.epsilon_abs,
                         max_iter=cfg.max_iter, time_limit=cfg.time_limit_s,
                         initial=heur)
    except Exception as exc:  # recorded per cell, sweep continues
        row.update(status=f"error: {exc}", opt_rate=None, heur_rate=None,
                   ratio=None, iters=None, wall_ms=None)
        return row
    bw = params.bandwidth
    opt = float(_to_mnats(res.lower, bw)) if res.incumbent else None
    h = float(_to_mnats(heur.objective, bw)) if heur else None
    row.update(status=res.status, opt_rate=opt, heur_rate=h,
               ratio=(h / opt if h is not None and opt else None),
               iters=res.iterations, wall_ms=1e3 * res.wall_time)
    return row


SWEEP_FIELDS = ["backhaul", "seed", "opt_rate", "heur_rate", "ratio", "iters",
                "wall_ms", "status"]


def run_sweep(cfg: ExperimentConfig, out_dir=None, threads=0) -> int:
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(cfg, cap, seed) for cap in cfg.backhaul_sweep_mnats_per_s
             for seed in cfg.seeds]
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]

    with open(out / "sweep.csv", "w", newline="") as fh:
        fh.write(f"# {_provenance(cfg, cfg.seeds)}\n")
        writer = csv.DictWriter(fh, SWEEP_FIELDS)
        writer.writeheader()
        writer.writerows(rows)

    means = []
    for cap in cfg.backhaul_sweep_mnats_per_s:
        cell = [r for r in rows if r["backhaul"] == cap and r["opt_rate"] is not None]
        opt = [r["opt_rate"] for r in cell]
        heur = [r["heur_rate"] for r in cell if r["heur_rate"] is not None]
        ratios = [r["ratio"] for r in cell if r["ratio"] is not None]
        means.append({"backhaul": cap, "n": len(cell),
                      "mean_opt_rate": float(np.mean(opt)) if opt else None,
                      "mean_heur_rate": float(np.mean(heur)) if heur else None,
                      "mean_ratio": float(np.mean(ratios)) if ratios else None})
    with open(out / "sweep_mean.csv", "w", newline="") as fh:
        fh.write(f"# {_provenance(cfg, cfg.seeds)}\n")
        writer = csv.DictWriter(fh, ["backhaul", "n", "mean_opt_rate",
                                     "mean_heur_rate", "mean_ratio"])
        writer.writeheader()
        writer.writerows(means)

    ratios = np.array([r["ratio"] for r in rows if r["ratio"] is not None])
    summary = {"cells": len(rows),
               "failed_cells": sum(r["status"] != "optimal" for r in rows),
               "ratio_quantiles": (np.quantile(ratios, [0, .1, .5, .9, 1]).tolist()
                                   if len(ratios) else None),
               "means": means}
    (out / "sweep_summary.json").write_text(json.dumps(summary, indent=1))
    return EXIT_OK if summary["failed_cells"] == 0 else EXIT_OTHER


def run_oracle_check(cfg: ExperimentConfig, out_dir=None) -> int:
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for seed in cfg.seeds:
        params = cfg.params()
        inst = Instance(params, generate_scenario(params, seed))
        rep = oracle_vs_dbrb(inst, delta=cfg.grid_step, eps_abs=cfg.epsilon_abs,
                             eps_rel=cfg.epsilon_rel, max_iter=cfg.max_iter)
        rep["seed"] = seed
        reports.append(rep)
    doc = {"pass": all(r["pass"] for r in reports), "reports": reports,
           "provenance": _provenance(cfg, cfg.seeds)}
    (out / "check.json").write_text(json.dumps(doc, indent=1))
    return EXIT_OK if doc["pass"] else EXIT_DIVERGED


def build_parser():
    parser = argparse.ArgumentParser(prog="compbeam", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in MODES:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path)
        p.add_argument("--threads", type=int, default=0,
                       help="worker processes for sweep cells; 0 = serial")
        p.add_argument("--epsilon-rel", type=float)
        p.add_argument("--max-iter", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = (load_config(args.config, args.command) if args.config
               else parse_config({}, args.command))
    except (ConfigError, OSError) as exc:
        print(f"compbeam: {exc}", file=sys.stderr)
        return EXIT_OTHER
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.epsilon_rel is not None:
        cfg.epsilon_rel = args.epsilon_rel
    if args.max_iter is not None:
        cfg.max_iter = args.max_iter
    try:
        if args.command == "solve":
            return run_solve(cfg, args.out)
        if args.command == "sweep":
            return run_sweep(cfg, args.out, args.threads)
        return run_oracle_check(cfg, args.out)
    except OracleCostError as exc:
        print(f"compbeam: refused: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
