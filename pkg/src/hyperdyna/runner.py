"""Experiment driver behind the CLI: runs every configured variant through the
three-task sequence, persists metrics/manifest/checkpoints, evaluates saved
policies, and resumes a checkpointed run bit-exactly.

A checkpoint taken between episodes captures the full mutable state of the
run: buffers, hypernetwork + snapshot, the active task's agent and RNG
streams, stage counters, and the metrics rows written so far.  Resuming
restores all of it, so an interrupted-and-resumed run writes the same metrics
bytes as an uninterrupted one.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .checkpoint import checkpoint_load, checkpoint_save
from .config import ExperimentConfig, config_from_ini, config_to_ini, save_config
from .dyna import ContinualRun, StageReport, TASK_SEQUENCE, TaskRun
from .envsim import TaskSpec, env_reset, env_step, apply_defaults
from .errors import CheckpointError, ConfigError
from .metrics import MetricsWriter, parse_metrics
from .sac import ActionGrid, discretize, select_action
from .seeding import RngBundle, derive_seed


@dataclass
class RunResult:
    output_dir: str
    metrics_path: str
    manifest_path: str
    checkpoint_path: str
    reports: list[StageReport]


def _run_manifest(cfg: ExperimentConfig, state: dict | None = None) -> dict:
    manifest = {
        "config": cfg.to_dict(),
        "master_seed": cfg.master_seed,
        "code_version": __version__,
    }
    if state:
        manifest.update(state)
    return manifest


def _save_run_checkpoint(path, cfg: ExperimentConfig, writer: MetricsWriter,
                         variant_index: int, run: ContinualRun | None,
                         final: bool = False) -> None:
    state = {
        "kind": "experiment",
        "final": final,
        "variant_index": variant_index,
        "config_ini": config_to_ini(cfg),
        "reports": [],
        "stage_index": 0,
        "task_run": None,
        "agent_task_id": None,
    }
    agent = hypernet = snapshot = buffers = None
    rng_states = None
    if run is not None:
        state["stage_index"] = run.stage_index
        state["reports"] = [asdict(r) for r in run.reports]
        hypernet = run.hypernet
        snapshot = run.snapshot
        buffers = run.buffers
        if run.task_run is not None:
            tr = run.task_run
            agent = tr.agent
            rng_states = tr.rngs.state()
            state["task_run"] = {
                "task_id": tr.task.task_id,
                "counters": tr.counters(),
                "report": asdict(tr.report),
            }
            state["agent_task_id"] = tr.task.task_id
        elif run.last_agent is not None:
            agent = run.last_agent
            state["agent_task_id"] = run.last_task_id
    checkpoint_save(
        path, agent=agent, hypernet=hypernet, snapshot=snapshot, buffers=buffers,
        rng_states=rng_states, manifest=_run_manifest(cfg, state),
        metrics_text=writer.text() if writer.rows else "",
    )


def _restore_run(bundle) -> tuple[ExperimentConfig, MetricsWriter, int, ContinualRun | None]:
    manifest = bundle.manifest
    if manifest.get("kind") != "experiment":
        raise CheckpointError("checkpoint does not hold an experiment run")
    cfg = config_from_ini(manifest["config_ini"], source="<checkpoint>")
    writer = MetricsWriter()
    if bundle.metrics_text:
        writer.rows = parse_metrics(bundle.metrics_text, source="<checkpoint>")
    variant_index = int(manifest["variant_index"])
    if manifest.get("final") or variant_index >= len(cfg.variants):
        return cfg, writer, variant_index, None
    variant = cfg.variants[variant_index]
    run = ContinualRun(cfg, variant)
    run.stage_index = int(manifest["stage_index"])
    run.reports = [StageReport(**r) for r in manifest["reports"]]
    if bundle.buffers is not None:
        run.buffers = bundle.buffers
    if bundle.hypernet is not None:
        run.hypernet = bundle.hypernet
    if bundle.snapshot is not None:
        run.snapshot = bundle.snapshot
    tr_state = manifest.get("task_run")
    if tr_state is not None:
        tr = TaskRun(int(tr_state["task_id"]), variant, cfg, run.hypernet,
                     run.buffers, run.snapshot, cfg.master_seed)
        tr.agent = bundle.agent
        tr.rngs = RngBundle.from_state(bundle.rng_states)
        tr.restore_counters(tr_state["counters"])
        tr.report = StageReport(**tr_state["report"])
        run.task_run = tr
    elif bundle.agent is not None:
        run.last_agent = bundle.agent
        run.last_task_id = manifest.get("agent_task_id")
    return cfg, writer, variant_index, run


def run_experiment(cfg: ExperimentConfig | None = None, *, resume_from=None,
                   output_dir=None) -> RunResult:
    """Execute (or resume) the full experiment and persist all artifacts."""
    started = time.perf_counter()
    run: ContinualRun | None = None
    if resume_from is not None:
        cfg, writer, variant_index, run = _restore_run(checkpoint_load(resume_from))
    else:
        if cfg is None:
            raise ConfigError("run_experiment needs a config or a checkpoint to resume")
        cfg.validate()
        writer = MetricsWriter()
        variant_index = 0

    out_dir = output_dir or os.environ.get("HYPERDYNA_OUTPUT_DIR") or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    manifest_path = os.path.join(out_dir, "manifest.json")
    final_checkpoint = os.path.join(out_dir, "checkpoint.hypd")
    save_config(cfg, os.path.join(out_dir, "config.ini"))

    all_reports: list[StageReport] = []
    while variant_index < len(cfg.variants):
        if run is None:
            run = ContinualRun(cfg, cfg.variants[variant_index])
        while not run.done:
            summary = run.step_episode()
            if summary is not None:
                writer(summary)
            if (cfg.checkpoint_every_episodes
                    and len(writer.rows) % cfg.checkpoint_every_episodes == 0):
                path = os.path.join(out_dir, f"checkpoint_ep{len(writer.rows):04d}.hypd")
                _save_run_checkpoint(path, cfg, writer, variant_index, run)
        all_reports.extend(run.reports)
        variant_index += 1
        if variant_index < len(cfg.variants):
            _save_run_checkpoint(
                os.path.join(out_dir, f"checkpoint_{cfg.variants[variant_index - 1]}.hypd"),
                cfg, writer, variant_index - 1, run)
        else:
            _save_run_checkpoint(final_checkpoint, cfg, writer, variant_index - 1, run,
                                 final=True)
        run = None

    writer.write(metrics_path)
    manifest = _run_manifest(cfg, {
        "variants_completed": list(cfg.variants),
        "episodes_recorded": len(writer.rows),
        "wall_time_s": time.perf_counter() - started,
    })
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return RunResult(out_dir, metrics_path, manifest_path, final_checkpoint, all_reports)


@dataclass
class EvalSummary:
    episodes: int
    mean_return: float
    stddev_return: float
    returns: list[float]


def evaluate_checkpoint(checkpoint_path, scenario: str, episodes: int) -> EvalSummary:
    """Deterministic-policy rollouts of a checkpointed agent; no learning."""
    bundle = checkpoint_load(checkpoint_path)
    if bundle.agent is None:
        raise CheckpointError(f"{checkpoint_path}: no agent stored in this checkpoint")
    task_id = bundle.manifest.get("agent_task_id") or 1
    cfg = config_from_ini(bundle.manifest["config_ini"], source="<checkpoint>")
    task = TaskSpec.for_task(int(task_id))
    env_params = cfg.env_params()
    grid = ActionGrid(cfg.action_grid_levels)
    returns = []
    for ep in range(episodes):
        seed = derive_seed(cfg.master_seed, "eval", scenario, ep)
        state, obs = env_reset(task, scenario, seed, env_params)
        total = 0.0
        for _ in range(env_params.steps_per_episode):
            action = select_action(bundle.agent, obs, "deterministic")
            state, obs, reward = env_step(state, apply_defaults(task, discretize(action, grid)))
            total += reward
        returns.append(total)
    if returns:
        mean = float(np.mean(returns))
        std = float(np.std(returns))
    else:
        mean = std = float("nan")
    return EvalSummary(len(returns), mean, std, returns)
