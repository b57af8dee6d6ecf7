"""Command-line driver: synth, optimize-bids, train, evaluate, report.

Exit codes: 0 success, 1 invalid input (config, data, schedule, checkpoint),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .agent import TrainingDiverged, evaluate, train
from .bidding import BidSchedule, ScheduleError, optimize_schedule
from .config import ConfigError, ExperimentConfig, load_config
from .core import InfeasibleReserveError
from .data import DataError, load_dataset, synth_dataset, write_dataset
from .env import OBS_DIM, BatteryEnv, DayNotInSplitError
from .heuristic import training_thresholds
from .qnet import CheckpointError, QFunction
from .report import ReportError, block_features, build_report, write_block_features, write_run
from .safety import N_ACTIONS

log = logging.getLogger("fcrstack")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
INVALID_INPUT = (
    ConfigError, DataError, ScheduleError, CheckpointError, ReportError,
    DayNotInSplitError, InfeasibleReserveError, FileNotFoundError,
)


class UsageError(ValueError):
    pass


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args, cfg: ExperimentConfig, default: str) -> Path:
    out = Path(args.out) if args.out else cfg.base_dir / cfg.output_dir / default
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(args, cfg: ExperimentConfig):
    p = cfg.data_paths(args.data)
    indicator = p["indicator"] if p["indicator"].exists() else None
    return load_dataset(p["frequency"], p["settlement"], p["fcr"], indicator)


def _schedule(args, ds, cfg: ExperimentConfig) -> np.ndarray:
    if not args.schedule:
        raise UsageError("--schedule is required")
    sched = BidSchedule.from_csv(args.schedule)
    sched.validate(cfg.battery)
    return sched.bids_for(ds)


def _days(ds, part: str) -> list:
    if part == "all":
        return list(ds.days())
    return sorted(ds.split().part(part))


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = Path(args.out) if args.out else cfg.data_paths()["frequency"].parent
    ds = synth_dataset(cfg.synth.days, cfg.seed, cfg.ou, cfg.prices, cfg.synth.start)
    paths = write_dataset(ds, out)
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def cmd_optimize_bids(args) -> int:
    cfg = _config(args)
    ds = _dataset(args, cfg)
    out = _out(args, cfg, "stage1")
    if args.uniform is not None:
        sched = BidSchedule.uniform(ds, args.uniform)
        sched.validate(cfg.battery)
    else:
        thresholds = training_thresholds(ds, cfg.heuristic)
        result = optimize_schedule(
            ds, cfg.monte_carlo, cfg.battery, cfg.fcr, cfg.heuristic, thresholds,
            workers=cfg.stage1.workers,
        )
        sched = result.schedule
        result.candidates_to_csv(out / "candidates.csv")
    sched.to_csv(out / "schedule.csv")
    write_block_features(out / "block_features.csv", block_features(ds, sched.bids_for(ds)))
    return EXIT_OK


def _env_factory(ds, bids, cfg: ExperimentConfig):
    def make(days):
        return BatteryEnv(ds, bids, cfg.battery, cfg.fcr, cfg.reward, cfg.env, days=days)

    return make


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _dataset(args, cfg)
    bids = _schedule(args, ds, cfg)
    train_days, val_days = _days(ds, "train"), _days(ds, "validation")
    if not train_days or not val_days:
        raise DataError(
            f"dataset days {ds.days()[0]}..{ds.days()[-1]} need at least one training "
            "(day 1-20 of a month) and one validation (day 21-25) day"
        )
    out = _out(args, cfg, "train")
    result = train(_env_factory(ds, bids, cfg), cfg.train, cfg.reward, train_days, val_days)
    meta = {
        "obs_dim": OBS_DIM,
        "n_actions": N_ACTIONS,
        "hidden": list(cfg.train.hidden),
        "seed": cfg.train.seed,
        "episodes": cfg.train.episodes,
        "best_episode": result.best_episode,
        "best_validation_profit": result.best_validation_profit,
        "train_days": [str(d) for d in train_days],
        "validation_days": [str(d) for d in val_days],
        "bids": [int(b) for b in bids],
    }
    result.q.save(out / "checkpoint.json", meta)
    (out / "checkpoint_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    result.log_to_csv(out / "training_log.csv")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    ds = _dataset(args, cfg)
    bids = _schedule(args, ds, cfg)
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    q = QFunction.load(args.checkpoint)
    if q.obs_dim != OBS_DIM or q.n_actions != N_ACTIONS:
        raise CheckpointError(
            f"checkpoint maps {q.obs_dim} inputs to {q.n_actions} actions; "
            f"this environment needs {OBS_DIM} -> {N_ACTIONS}"
        )
    days = _days(ds, args.split)
    if not days:
        raise DataError(f"dataset has no {args.split} days")
    out = _out(args, cfg, "evaluate")
    env = _env_factory(ds, bids, cfg)(days)
    report = evaluate(q, env, days)
    write_run(out, report, ds, bids, days, args.split)
    agg = report.aggregate()
    log.info("total profit %.2f (FCR %.2f, imbalance %.2f), %.2f cycles",
             agg.total_profit, agg.fcr_revenue, agg.imbalance_profit, agg.cycles)
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg, "report")
    build_report(args.runs, out, n_bins=args.bins, figures=args.figures)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment TOML file (defaults apply when omitted)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the experiment seed")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="dataset directory (overrides [data] dir)")

    p = argparse.ArgumentParser(prog="fcrstack", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("optimize-bids", parents=[common, data], help="Stage 1: choose a bid per 4 h block")
    s.add_argument("--uniform", type=int, metavar="MW", help="write a constant schedule instead")
    s.set_defaults(func=cmd_optimize_bids)

    s = sub.add_parser("train", parents=[common, data], help="Stage 2: train the DDQN arbitrage agent")
    s.add_argument("--schedule", help="bid schedule CSV")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common, data], help="greedy evaluation of a checkpoint")
    s.add_argument("--schedule", help="bid schedule CSV")
    s.add_argument("--checkpoint", help="Q-network checkpoint JSON")
    s.add_argument("--split", choices=("train", "validation", "test", "all"), default="test")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", parents=[common], help="comparison and heatmap tables from evaluated runs")
    s.add_argument("runs", nargs="+", help="evaluate output directories")
    s.add_argument("--bins", type=int, default=4, help="bins per heatmap axis")
    s.add_argument("--figures", action="store_true", help="also render PNG figures")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (*INVALID_INPUT, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
