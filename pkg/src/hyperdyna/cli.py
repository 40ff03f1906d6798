"""Command-line front end: run, evaluate, plot, inspect-checkpoint.

``run`` executes every configured variant through the continual task sequence
and writes metrics.csv, manifest.json and checkpoints under the output
directory (HYPERDYNA_OUTPUT_DIR overrides the config's choice).  With
``--parallel-variants`` each variant runs in its own subprocess with a
per-variant output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from dataclasses import replace

from .checkpoint import read_container, checkpoint_load
from .config import load_config, save_config
from .errors import CheckpointError, ConfigError, MetricsError
from .plots import cli_plot
from .runner import evaluate_checkpoint, run_experiment


def _cmd_run(args) -> int:
    if args.resume:
        result = run_experiment(resume_from=args.resume, output_dir=args.output_dir)
    else:
        if not os.path.exists(args.config):
            print(f"error: config file not found: {args.config}", file=sys.stderr)
            return 2
        cfg = load_config(args.config)
        if args.parallel_variants and len(cfg.variants) > 1:
            return _run_parallel(cfg, args)
        result = run_experiment(cfg, output_dir=args.output_dir)
    print(f"metrics:    {result.metrics_path}")
    print(f"manifest:   {result.manifest_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    for report in result.reports:
        last = report.episode_returns[-1] if report.episode_returns else float("nan")
        status = " HALTED" if report.halted else ""
        print(f"  {report.variant} task {report.task_id}: "
              f"{len(report.episode_returns)} episodes, last return {last:.3f} K h"
              f" ({report.wall_time_s:.1f}s){status}")
    return 0


def _run_parallel(cfg, args) -> int:
    """One subprocess per variant, each with its own output directory."""
    base_out = args.output_dir or os.environ.get("HYPERDYNA_OUTPUT_DIR") or cfg.output_dir
    procs = []
    for variant in cfg.variants:
        out_dir = os.path.join(base_out, variant)
        os.makedirs(out_dir, exist_ok=True)
        sub_cfg = replace(cfg, variants=(variant,), output_dir=out_dir)
        cfg_path = os.path.join(out_dir, "variant-config.ini")
        save_config(sub_cfg, cfg_path)
        procs.append(subprocess.Popen(
            [sys.executable, "-m", "hyperdyna.cli", "run", "--config", cfg_path]))
    status = 0
    for proc in procs:
        status = max(status, proc.wait())
    return status


def _cmd_evaluate(args) -> int:
    summary = evaluate_checkpoint(args.checkpoint, args.scenario, args.episodes)
    print(f"episodes: {summary.episodes}")
    print(f"mean return:   {summary.mean_return:.4f} K h")
    print(f"stddev return: {summary.stddev_return:.4f} K h")
    return 0


def _cmd_plot(args) -> int:
    for path in cli_plot(args.metrics, args.output):
        print(f"wrote {path}")
    return 0


def _cmd_inspect(args) -> int:
    sections = read_container(args.checkpoint)
    manifest = json.loads(sections["manifest"].decode("utf-8")) if "manifest" in sections else {}
    print(f"checkpoint: {args.checkpoint}")
    for key in ("kind", "final", "variant_index", "stage_index", "agent_task_id",
                "master_seed", "code_version"):
        if key in manifest:
            print(f"  {key}: {manifest[key]}")
    bundle = checkpoint_load(args.checkpoint)
    if bundle.snapshot is not None:
        print(f"  snapshot tasks: {list(bundle.snapshot.task_ids)}")
    print("  sections:")
    for name, payload in sections.items():
        print(f"    {name:<18} {len(payload):>12} bytes")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hyperdyna",
        description="Continual model-based RL experiments on the thermal-zone surrogate",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run all configured variants")
    p_run.add_argument("--config", help="INI experiment config")
    p_run.add_argument("--resume", help="checkpoint to resume from")
    p_run.add_argument("--output-dir", help="override the output directory")
    p_run.add_argument("--parallel-variants", action="store_true",
                       help="run each variant in its own subprocess")
    p_run.set_defaults(func=_cmd_run)

    p_eval = sub.add_parser("evaluate", help="deterministic rollouts of a saved agent")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--scenario", default="january_like",
                        choices=("january_like", "april_like"))
    p_eval.add_argument("--episodes", type=int, default=3)
    p_eval.set_defaults(func=_cmd_evaluate)

    p_plot = sub.add_parser("plot", help="learning-curve SVGs from a metrics file")
    p_plot.add_argument("--metrics", required=True)
    p_plot.add_argument("--output", required=True, help="directory for the SVG files")
    p_plot.set_defaults(func=_cmd_plot)

    p_ins = sub.add_parser("inspect-checkpoint", help="list checkpoint sections")
    p_ins.add_argument("--checkpoint", required=True)
    p_ins.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run" and not args.resume and not args.config:
        parser.error("run needs --config or --resume")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, MetricsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
