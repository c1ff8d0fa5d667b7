"""Command-line entry points.

    synadapt train {pretrain,phase1,phase2,roa,rma} [--config C] [--seed N]
                   [--profile desk|paper] [--out DIR] [--dry-run]
    synadapt eval  [--config C] [--seed N] [--profile P] [--out DIR]
    synadapt plot  [--config C] [--out DIR]

Every output lands under the run directory (--out). The resolved
configuration is echoed to <out>/config.yaml. Any config field can also be
overridden via environment variables with the SYNADAPT_ prefix, double
underscores separating the path (SYNADAPT_PPO__N_ENVS=64).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import config_to_yaml, load_config, save_config
from .runio import CheckpointError, load_checkpoint

STAGES = ("pretrain", "phase1", "phase2", "roa", "rma")
PREREQ = {"pretrain": None, "phase1": "pretrain", "phase2": "phase1",
          "roa": "pretrain", "rma": "pretrain"}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--profile", default=None, choices=["desk", "paper"])
    p.add_argument("--out", default=None, help="run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synadapt",
        description="Spiking-policy motor adaptation: training, evaluation, plots.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training stage")
    p_train.add_argument("stage", choices=STAGES)
    _add_common(p_train)
    p_train.add_argument("--dry-run", action="store_true",
                         help="validate config, print resolved values, exit")

    p_eval = sub.add_parser("eval", help="run the evaluation suite")
    _add_common(p_eval)

    p_plot = sub.add_parser("plot", help="emit figures from a run directory")
    _add_common(p_plot)
    return parser


def _resolve(args) -> "RunConfig":
    return load_config(args.config, profile=args.profile, seed=args.seed,
                       out_dir=args.out)


def cmd_train(args) -> int:
    from .pipeline import run_stage

    try:
        cfg = _resolve(args)
    except (KeyError, ValueError, FileNotFoundError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    if args.dry_run:
        print(config_to_yaml(cfg), end="")
        return 0
    run_dir = cfg.out_dir
    os.makedirs(run_dir, exist_ok=True)
    save_config(cfg, os.path.join(run_dir, "config.yaml"))
    prereq = PREREQ[args.stage]
    prereq_params = None
    if prereq is not None:
        path = os.path.join(run_dir, f"{prereq}.ckpt.npz")
        try:
            _, prereq_params, _ = load_checkpoint(path)
        except CheckpointError as exc:
            print(f"error: stage '{args.stage}' requires the '{prereq}' "
                  f"checkpoint ({exc})", file=sys.stderr)
            return 2
    _, info = run_stage(cfg, args.stage, run_dir, prereq_params)
    print(f"stage '{args.stage}' finished: "
          + json.dumps({k: v for k, v in info.items()
                        if isinstance(v, (int, float, bool, str))},
                       sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    from .pipeline import bundles_from_params, evaluate_suite

    cfg = _resolve(args)
    run_dir = cfg.out_dir
    stage_params = {}
    for stage in ("pretrain", "phase1", "phase2", "rma"):
        path = os.path.join(run_dir, f"{stage}.ckpt.npz")
        if not os.path.exists(path):
            continue
        try:
            _, params, _ = load_checkpoint(path)
        except CheckpointError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3
        stage_params[stage] = params
    if not stage_params:
        print(f"error: no checkpoints under {run_dir}", file=sys.stderr)
        return 3
    bundles = bundles_from_params(cfg, stage_params)
    records, table, _ = evaluate_suite(cfg, bundles)
    with open(os.path.join(run_dir, "results.jsonl"), "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(os.path.join(run_dir, "results.txt"), "w") as f:
        f.write(table + "\n")
    print(table)
    return 0


def cmd_plot(args) -> int:
    from .plots import make_plots

    cfg = _resolve(args)
    run_dir = cfg.out_dir
    try:
        written = make_plots(run_dir, cfg)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    for path in written:
        print(path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train":
        return cmd_train(args)
    if args.command == "eval":
        return cmd_eval(args)
    if args.command == "plot":
        return cmd_plot(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
