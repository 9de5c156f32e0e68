"""Command line front end: ``liempc simulate|sweep|validate``.

Exit codes: 0 success, 1 validation failure, 2 config error, 3 episode
abort, 4 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import sim, validate
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .hydro import VesselParamError, load_vessel

EXIT_OK = 0
EXIT_VALIDATE = 1
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_SOLVER = 4
OUT_ENV = "LIEMPC_OUT"

log = logging.getLogger("liempc")


def _load(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.episode.seed = args.seed
    return cfg


def _out_dir(args, cfg):
    out = args.out or cfg.output_dir or os.environ.get(OUT_ENV) or "results"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _abort_status(episodes):
    kinds = {e.abort_kind for e in episodes if e.aborted}
    if "solver" in kinds:
        return EXIT_SOLVER
    return EXIT_ABORT if kinds else EXIT_OK


def cmd_simulate(args):
    cfg = _load(args)
    kind = args.controller or cfg.controller.kind
    params = load_vessel(cfg.vessel)
    spec = cfg.controller_spec(kind)
    ecfg = cfg.episode_config(kind)
    mc = sim.run_monte_carlo(ecfg, params, spec, n=cfg.episode.episodes, jobs=args.jobs)
    out = _out_dir(args, cfg)
    for i, ep in enumerate(mc.episodes):
        sim.write_episode_csv(out / f"{ecfg.profile}_{kind}_ep{i:02d}.csv", ep)
    summary = {"controller": kind, "profile": ecfg.profile,
               "current_speed_mps": ecfg.current_speed,
               "current_direction_rad": ecfg.current_direction,
               "duration_s": ecfg.duration, "seed": cfg.episode.seed, **mc.summary()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    (out / "config.yaml").write_text(dump_config(cfg))
    print(f"{kind} {ecfg.profile}: mean final error {summary['mean_final_error_m']:.3f} m, "
          f"converged {summary['convergence_fraction']:.0%}, "
          f"mean solve {summary['mean_solve_ms']:.1f} ms -> {out}")
    return _abort_status(mc.episodes)


SWEEP_COLUMNS = ("controller", "speed_mps", "angle_rad", "mean_final_error_m",
                 "max_final_error_m", "mean_solve_ms")


def cmd_sweep(args):
    cfg = _load(args)
    params = load_vessel(cfg.vessel)
    kinds = [args.controller] if args.controller else list(cfg.sweep.controllers)
    ecfg = cfg.episode_config()
    rows, episodes = [], []
    for kind in kinds:
        res, eps = sim.run_current_sweep(ecfg, params, cfg.controller_spec(kind),
                                         speeds=cfg.sweep.current_speeds_mps,
                                         angles=cfg.sweep.angles,
                                         episodes=cfg.sweep.episodes, jobs=args.jobs)
        rows.extend(res.rows)
        episodes.extend(eps)
    out = _out_dir(args, cfg)
    with open(out / "sweep.csv", "w") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for r in rows:
            fh.write(f"{r.controller},{r.speed:.6g},{r.angle:.6g},{r.mean_final_error:.6g},"
                     f"{r.max_final_error:.6g},{r.mean_solve_ms:.6g}\n")
    timing = []
    for kind in kinds:
        for s in cfg.sweep.current_speeds_mps:
            sel = [r for r in rows if r.controller == kind and r.speed == s]
            timing.append({"controller": kind, "speed_mps": s,
                           "mean_solve_ms": float(np.mean([r.mean_solve_ms for r in sel])),
                           "worst_final_error_m": max(r.mean_final_error for r in sel)})
    summary = {"profile": ecfg.profile, "angles": cfg.sweep.angles,
               "episodes_per_cell": cfg.sweep.episodes, "timing": timing,
               "aborted": int(sum(e.aborted for e in episodes))}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    for t in timing:
        print(f"{t['controller']:<12} {t['speed_mps']:.1f} m/s  solve {t['mean_solve_ms']:8.2f} ms"
              f"  worst final error {t['worst_final_error_m']:.3f} m")
    return _abort_status(episodes)


def cmd_validate(args):
    seed = 0 if args.seed is None else args.seed
    results = validate.run_all(seed=seed, cases=args.cases)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATE


def build_parser():
    p = argparse.ArgumentParser(prog="liempc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment YAML file")
        sp.add_argument("--controller", choices=["proposed", "nmpc", "nmpc-simple"])
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
        sp.add_argument("--jobs", type=int, default=1, help="parallel episode workers")

    common(sub.add_parser("simulate", help="Monte-Carlo batch of one configuration"))
    common(sub.add_parser("sweep", help="current speed/direction sweep"))
    v = sub.add_parser("validate", help="randomized invariant suites")
    v.add_argument("--seed", type=int)
    v.add_argument("--cases", type=int, default=20)
    return p


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "validate": cmd_validate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, VesselParamError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
