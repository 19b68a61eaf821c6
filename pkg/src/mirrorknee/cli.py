"""Command-line entry point: ``mirrorknee <command> [options]``.

Exit codes: 0 on success, 1 on a configuration or input error, 2 when
``lqr-check`` does not reach the oracle gain.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import ConfigError, MalformedTrajectory, TrialAborted
from .features import extract_features
from .gait import PHASES
from .harness import (
    read_trajectory_csv,
    run_batch,
    run_trial,
    summarize,
    trajectory_csv_text,
    trial_seed,
    write_outputs,
)
from .linear import lqr_check

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML file merged over the packaged defaults")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=["sim", "human-cadence"])
    p.add_argument("--coadapt", choices=["on", "off"])
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mirrorknee", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a single tuning trial")
    _common(run)
    run.add_argument("--trial", type=int, default=0, help="trial index used to derive the seed")
    run.add_argument("--trajectories", action="store_true", help="also write trajectories.csv")

    batch = sub.add_parser("batch", help="run the full multi-trial protocol")
    _common(batch)
    batch.add_argument("--trials", type=int)
    batch.add_argument("--jobs", type=int, help="worker processes")

    lqr = sub.add_parser("lqr-check", help="policy iteration vs the Riccati oracle on the linear plant")
    lqr.add_argument("--config", type=Path)
    lqr.add_argument("--seed", type=int)

    ext = sub.add_parser("extract-features", help="features of every cycle in a trajectory CSV")
    ext.add_argument("csv", type=Path)
    ext.add_argument("--config", type=Path)
    ext.add_argument("--side", default="prosthesis")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    ex: dict = {}
    for name in ("seed", "trials", "jobs", "mode"):
        val = getattr(args, name, None)
        if val is not None:
            ex[name] = val
    if getattr(args, "out", None) is not None:
        ex["out_dir"] = args.out
    if getattr(args, "coadapt", None) is not None:
        ex["coadapt"] = args.coadapt == "on"
    out = {"experiment": ex} if ex else {}
    if args.command == "lqr-check" and args.seed is not None:
        out = {"lqr": {"seed": args.seed}}
    return out


def _cmd_run(cfg: ExperimentConfig, args) -> int:
    seed = trial_seed(cfg.seed, args.trial)
    rec = run_trial(cfg, seed, trial_id=args.trial, record_trajectories=args.trajectories)
    out = Path(cfg.out_dir)
    summary = summarize([rec], cfg)
    write_outputs(out, cfg, [rec], summary)
    if args.trajectories:
        items = [(rec.trial, c, t) for c, t in rec.trajectories]
        (out / "trajectories.csv").write_text(trajectory_csv_text(items), encoding="utf-8")
    (out / f"learners_{rec.trial:03d}.json").write_text(
        json.dumps(rec.learners, indent=2) + "\n", encoding="utf-8"
    )
    status = f"converged at update {rec.converged_at}" if rec.converged else "not converged"
    if rec.aborted:
        status = "aborted"
    print(f"trial {rec.trial} seed {seed}: {status}, {rec.n_updates} updates, "
          f"{rec.failed_cycles} failed cycles -> {out}")
    return EXIT_OK


def _cmd_batch(cfg: ExperimentConfig, args) -> int:
    summary, _ = run_batch(cfg, cfg.out_dir)
    mean = summary["mean_updates_to_convergence"]
    print(f"{summary['converged']}/{summary['trials']} trials converged"
          + (f", mean {mean:.1f} updates" if mean is not None else ""))
    print("phase  peak RMSE first -> last (deg)  duration RMSE first -> last (%)")
    for name, m in summary["rmse"].items():
        if m["peak_first"] is None:
            continue
        print(f"{name:5s}  {m['peak_first']:6.2f} -> {m['peak_last']:5.2f}"
              f"               {m['duration_pct_first']:6.2f} -> {m['duration_pct_last']:5.2f}")
    print(f"outputs in {cfg.out_dir}")
    return EXIT_OK


def _cmd_lqr(cfg: ExperimentConfig, args) -> int:
    report = lqr_check(cfg.lqr)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_CHECK


def _cmd_extract(cfg: ExperimentConfig, args) -> int:
    items = read_trajectory_csv(args.csv, cfg.plant.dt)
    cols = ["trial", "cycle"] + [f"P_{p.name}" for p in PHASES] + [f"D_{p.name}" for p in PHASES]
    print(",".join(cols))
    bad = 0
    for trial, cycle, traj in items:
        try:
            f = extract_features(traj, side=args.side, cfg=cfg.features)
        except MalformedTrajectory as exc:
            bad += 1
            print(f"# trial {trial} cycle {cycle}: {exc}", file=sys.stderr)
            continue
        print(",".join([str(trial), str(cycle)] + [repr(float(v)) for v in (*f.peak, *f.duration)]))
    return EXIT_OK if bad < len(items) else EXIT_CONFIG


COMMANDS = {"run": _cmd_run, "batch": _cmd_batch, "lqr-check": _cmd_lqr, "extract-features": _cmd_extract}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING)
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MalformedTrajectory, OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrialAborted as exc:
        print(f"trial aborted: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
