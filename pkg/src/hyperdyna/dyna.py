"""Training orchestration: bounded FIFO replay memories and the per-step
interleaving of environment interaction, world-model training, synthetic
rollouts and SAC updates, run across the three-task continual sequence.

Per environment step (MBRL variant): act with the stochastic policy, store the
real transition in both the real memory and the model-training memory, take
one hypernetwork training step (once the model memory passed warm-up),
generate the configured number of one-step synthetic rollouts into the
synthetic memory, then run a gated SAC update on a mixed real/synthetic batch.
The MFRL variant skips everything model-related and trains on real data only.

Policy buffers (real + synthetic) are cleared at task boundaries because the
agent is reinitialized per task and the controlled action dimensionality
changes; the model-training memory persists across tasks so the world model
keeps its continual-learning warm start.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import hyperworld, sac
from .config import ExperimentConfig
from .envsim import (TaskSpec, Transition, apply_defaults, env_reset, env_step,
                     setpoint_schedule)
from .errors import (ContractViolationError, InsufficientDataError,
                     TrainingDivergenceError)
from .hyperworld import (HypernetState, RegularizationSnapshot, capture_snapshot,
                         hypernet_init, hypernet_train_step, synthetic_rollouts)
from .sac import (ActionGrid, AgentState, discretize, obs_dim, policy_sampler,
                  policy_update_gate, sac_init, sac_update, select_action)
from .seeding import RngBundle, derive_seed

VARIANT_MBRL = "mbrl"
VARIANT_MFRL = "mfrl"


class ReplayBuffer:
    """Bounded FIFO of transitions; eviction is strictly oldest-first."""

    def __init__(self, capacity: int, kind: str):
        if capacity < 1:
            raise ContractViolationError("capacity must be >= 1")
        if kind not in ("real", "synthetic"):
            raise ContractViolationError(f"unknown buffer kind {kind!r}")
        self.capacity = capacity
        self.kind = kind
        self._items: list[Transition] = []
        self._start = 0  # ring read position once full

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> Transition | None:
        """Append; returns the evicted transition once at capacity."""
        if transition.synthetic != (self.kind == "synthetic"):
            raise ContractViolationError(
                f"{self.kind} buffer got a {'synthetic' if transition.synthetic else 'real'} transition"
            )
        if len(self._items) < self.capacity:
            self._items.append(transition)
            return None
        evicted = self._items[self._start]
        self._items[self._start] = transition
        self._start = (self._start + 1) % self.capacity
        return evicted

    def items(self) -> list[Transition]:
        """Contents in insertion order, oldest first."""
        return self._items[self._start:] + self._items[: self._start]

    def sample(self, rng: np.random.Generator, k: int, replace: bool = False) -> list[Transition]:
        n = len(self._items)
        if k < 0 or (not replace and k > n) or (replace and n == 0 and k > 0):
            raise InsufficientDataError(f"asked for {k} of {n} buffered transitions")
        idx = rng.integers(0, n, size=k) if replace else rng.choice(n, size=k, replace=False)
        return [self._items[i] for i in idx]

    def clear(self) -> None:
        self._items = []
        self._start = 0


def buffer_push(buffer: ReplayBuffer, transition: Transition) -> Transition | None:
    return buffer.push(transition)


@dataclass
class BufferSet:
    """The three experience memories: real, synthetic, model-training."""

    m_alpha: ReplayBuffer
    m_beta: ReplayBuffer
    m_gamma: ReplayBuffer

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "BufferSet":
        return cls(
            m_alpha=ReplayBuffer(cfg.buffer_real, "real"),
            m_beta=ReplayBuffer(cfg.buffer_synthetic, "synthetic"),
            m_gamma=ReplayBuffer(cfg.buffer_hypernet, "real"),
        )


def mixed_batch(buffers: BufferSet, batch_size: int, real_fraction: float,
                rng: np.random.Generator) -> list[Transition] | None:
    """Uniform batch mixing real and synthetic pools; None = skip this update.

    The real share is ceil(real_fraction * batch_size); a sparse synthetic
    pool is backfilled from the real one (and vice versa), both sampled
    without replacement.  Returns None while the combined pools cannot yet
    fill one batch.
    """
    n_alpha, n_beta = len(buffers.m_alpha), len(buffers.m_beta)
    if n_alpha + n_beta < batch_size:
        return None
    n_real = int(np.ceil(real_fraction * batch_size))
    n_syn = min(batch_size - n_real, n_beta)
    n_real = batch_size - n_syn
    if n_real > n_alpha:
        n_syn += n_real - n_alpha
        n_real = n_alpha
    batch = buffers.m_alpha.sample(rng, n_real)
    if n_syn:
        batch = batch + buffers.m_beta.sample(rng, n_syn)
    return batch


@dataclass
class StageReport:
    """Outcome of one task stage: per-episode traces and run bookkeeping."""

    task_id: int
    variant: str
    master_seed: int
    episode_returns: list[float] = field(default_factory=list)
    hypernet_mse_dynamics: list[float] = field(default_factory=list)
    hypernet_mse_reward: list[float] = field(default_factory=list)
    hypernet_regularization: list[float] = field(default_factory=list)
    steps: int = 0
    wall_time_s: float = 0.0
    halted: bool = False
    halt_step: int | None = None
    halt_reason: str = ""


@dataclass(frozen=True)
class EpisodeSummary:
    """One completed episode, in the shape the metrics sink records."""

    variant: str
    task_id: int
    episode: int  # 1-based within the task
    step: int  # cumulative environment steps within the task
    episodic_return: float
    hypernet_mse_dynamics: float
    hypernet_mse_reward: float
    hypernet_regularization: float
    sim_seconds: float  # deterministic simulated time since task start


def agent_seed(master_seed: int, variant: str, task_id: int) -> int:
    """Seed used for the fresh per-task SAC agent (exposed for tests)."""
    return derive_seed(master_seed, variant, f"task{task_id}", "agent")


class TaskRun:
    """Mutable state of one task stage, stepped one episode at a time.

    Everything that evolves lives in attributes that the checkpoint module can
    serialize between episodes: agent, hypernet, snapshot, buffers, the RNG
    bundle, and the episode/step counters.
    """

    def __init__(self, task_id: int, variant: str, cfg: ExperimentConfig,
                 hypernet: HypernetState | None, buffers: BufferSet,
                 snapshot: RegularizationSnapshot, master_seed: int | None = None):
        if variant not in (VARIANT_MBRL, VARIANT_MFRL):
            raise ContractViolationError(f"unknown variant {variant!r}")
        if variant == VARIANT_MBRL and hypernet is None:
            raise ContractViolationError("the MBRL variant needs a hypernet")
        self.task = TaskSpec.for_task(task_id)
        self.variant = variant
        self.cfg = cfg
        self.hypernet = hypernet
        self.buffers = buffers
        self.snapshot = snapshot
        self.master_seed = cfg.master_seed if master_seed is None else master_seed
        self.env_params = cfg.env_params()
        self.grid = ActionGrid(cfg.action_grid_levels)
        self.rngs = RngBundle(self.master_seed, variant, f"task{task_id}")
        self.agent: AgentState = sac_init(
            obs_dim(self.env_params.forecast_steps), self.task.action_dim,
            agent_seed(self.master_seed, variant, task_id), hidden=cfg.actor_hidden,
        )
        self.episode_index = 0  # completed episodes
        self.global_step = 0  # environment steps within this task
        self.report = StageReport(task_id, variant, self.master_seed)

    @property
    def is_mbrl(self) -> bool:
        return self.variant == VARIANT_MBRL

    def run_episode(self) -> EpisodeSummary:
        cfg = self.cfg
        env_seed = derive_seed(self.master_seed, self.variant,
                               f"task{self.task.task_id}", "env", self.episode_index)
        state, obs = env_reset(self.task, cfg.scenario, env_seed, self.env_params)
        ep_return = 0.0
        loss_sums = np.zeros(3)
        loss_count = 0

        for _ in range(self.env_params.steps_per_episode):
            a_cont = select_action(self.agent, obs, "stochastic", self.rngs.sac)
            a_disc = discretize(a_cont, self.grid)
            full = apply_defaults(self.task, a_disc)
            setpoints = setpoint_schedule(state.sim_time_s, self.env_params)
            state, next_obs, reward = env_step(state, full)
            tr = Transition(
                obs=obs, actions=full, next_obs=next_obs, reward=reward,
                setpoints=setpoints, task_id=self.task.task_id,
                policy_action=tuple(float(a) for a in a_cont),
            )
            buffer_push(self.buffers.m_alpha, tr)
            buffer_push(self.buffers.m_gamma, tr)

            if self.is_mbrl and len(self.buffers.m_gamma) >= cfg.hypernet_warmup:
                batch = self.buffers.m_gamma.sample(
                    self.rngs.model, min(cfg.batch_size, len(self.buffers.m_gamma))
                )
                losses = hypernet_train_step(
                    self.hypernet, batch, self.task.task_id, self.snapshot,
                    beta=cfg.reg_beta, lr=cfg.lr_hypernet, rng=self.rngs.model,
                )
                loss_sums += (losses.mse_dynamics, losses.mse_reward, losses.regularization)
                loss_count += 1
                seeds = self.buffers.m_alpha.sample(
                    self.rngs.model, cfg.synthetic_per_step, replace=True
                )
                for synth in synthetic_rollouts(
                    self.hypernet, self.task, seeds,
                    policy_sampler(self.agent, self.rngs.model), self.rngs.model,
                    n_models=cfg.ensemble_models, grid=self.grid,
                ):
                    buffer_push(self.buffers.m_beta, synth)

            if policy_update_gate(self.global_step, cfg.policy_update_every):
                real_fraction = 1.0 if self.variant == VARIANT_MFRL else cfg.real_fraction
                batch = mixed_batch(self.buffers, cfg.batch_size, real_fraction,
                                    self.rngs.sample)
                if batch is not None:
                    sac_update(
                        self.agent, batch, gamma=cfg.gamma, tau=cfg.tau,
                        lr_actor=cfg.lr_actor, lr_critic=cfg.lr_critic,
                        lr_alpha=cfg.lr_alpha or None, rng=self.rngs.sac,
                    )

            obs = next_obs
            ep_return += reward
            self.global_step += 1

        self.episode_index += 1
        means = loss_sums / loss_count if loss_count else np.full(3, np.nan)
        summary = EpisodeSummary(
            variant=self.variant,
            task_id=self.task.task_id,
            episode=self.episode_index,
            step=self.global_step,
            episodic_return=ep_return,
            hypernet_mse_dynamics=float(means[0]),
            hypernet_mse_reward=float(means[1]),
            hypernet_regularization=float(means[2]),
            sim_seconds=self.global_step * self.env_params.dt_s,
        )
        self.report.episode_returns.append(ep_return)
        self.report.hypernet_mse_dynamics.append(float(means[0]))
        self.report.hypernet_mse_reward.append(float(means[1]))
        self.report.hypernet_regularization.append(float(means[2]))
        self.report.steps = self.global_step
        return summary

    def counters(self) -> dict:
        return {"episode_index": self.episode_index, "global_step": self.global_step}

    def restore_counters(self, counters: dict) -> None:
        self.episode_index = int(counters["episode_index"])
        self.global_step = int(counters["global_step"])


def run_task(task_id: int, variant: str, cfg: ExperimentConfig,
             hypernet: HypernetState | None = None, *,
             buffers: BufferSet | None = None,
             snapshot: RegularizationSnapshot | None = None,
             master_seed: int | None = None,
             episodes: int | None = None,
             metrics_sink=None,
             on_episode=None,
             task_run: TaskRun | None = None) -> StageReport:
    """Run one task stage to completion (or divergence) and report it.

    ``task_run`` lets a caller resume a half-finished stage; otherwise a fresh
    agent is initialized for the task.  On a training-divergence error the
    stage halts and the report carries the failing step index.
    """
    if task_run is None:
        if variant == VARIANT_MBRL and hypernet is None:
            hypernet = hypernet_init(
                hyperworld.TargetSpec.default(cfg.target_hidden),
                derive_seed(master_seed if master_seed is not None else cfg.master_seed,
                            variant, "hypernet"),
                hidden=cfg.hypernet_hidden, noise_dim=cfg.noise_dim,
                noise_sigma=cfg.noise_sigma,
            )
        task_run = TaskRun(task_id, variant, cfg, hypernet,
                           buffers or BufferSet.from_config(cfg),
                           snapshot or RegularizationSnapshot.empty(), master_seed)
    budget = cfg.episodes_for(task_id) if episodes is None else episodes
    started = time.perf_counter()
    try:
        while task_run.episode_index < budget:
            summary = task_run.run_episode()
            if metrics_sink is not None:
                metrics_sink(summary)
            if on_episode is not None:
                on_episode(task_run)
    except TrainingDivergenceError as exc:
        task_run.report.halted = True
        task_run.report.halt_step = task_run.global_step
        task_run.report.halt_reason = str(exc)
    task_run.report.wall_time_s += time.perf_counter() - started
    return task_run.report


TASK_SEQUENCE = (1, 2, 3)


class ContinualRun:
    """The three-task sequence as an explicit state machine.

    One persistent hypernetwork and model memory carry across stages; the SAC
    agent and the policy buffers are fresh per task, and after each MBRL stage
    the regularization snapshot of all completed tasks is recaptured.  Driving
    it one episode at a time lets the experiment runner checkpoint between
    episodes and resume exactly.
    """

    def __init__(self, cfg: ExperimentConfig, variant: str,
                 master_seed: int | None = None):
        cfg.validate()
        if variant not in (VARIANT_MBRL, VARIANT_MFRL):
            raise ContractViolationError(f"unknown variant {variant!r}")
        self.cfg = cfg
        self.variant = variant
        self.master_seed = cfg.master_seed if master_seed is None else master_seed
        self.buffers = BufferSet.from_config(cfg)
        self.hypernet: HypernetState | None = None
        if variant == VARIANT_MBRL:
            self.hypernet = hypernet_init(
                hyperworld.TargetSpec.default(cfg.target_hidden),
                derive_seed(self.master_seed, variant, "hypernet"),
                hidden=cfg.hypernet_hidden, noise_dim=cfg.noise_dim,
                noise_sigma=cfg.noise_sigma,
            )
        self.snapshot = RegularizationSnapshot.empty()
        self.stage_index = 0
        self.task_run: TaskRun | None = None
        self.reports: list[StageReport] = []
        self.last_agent: AgentState | None = None
        self.last_task_id: int | None = None

    @property
    def done(self) -> bool:
        return self.stage_index >= len(TASK_SEQUENCE)

    @property
    def current_task_id(self) -> int:
        return TASK_SEQUENCE[self.stage_index]

    def _ensure_stage(self) -> None:
        if self.task_run is None:
            self.buffers.m_alpha.clear()
            self.buffers.m_beta.clear()
            self.task_run = TaskRun(self.current_task_id, self.variant, self.cfg,
                                    self.hypernet, self.buffers, self.snapshot,
                                    self.master_seed)

    def _finish_stage(self) -> None:
        self.reports.append(self.task_run.report)
        if self.variant == VARIANT_MBRL:
            self.snapshot = capture_snapshot(self.hypernet,
                                             range(1, self.current_task_id + 1))
        self.last_agent = self.task_run.agent
        self.last_task_id = self.current_task_id
        self.task_run = None
        self.stage_index += 1

    def step_episode(self) -> EpisodeSummary | None:
        """Run one episode; returns None once the whole sequence finished."""
        if self.done:
            return None
        self._ensure_stage()
        started = time.perf_counter()
        try:
            summary = self.task_run.run_episode()
        except TrainingDivergenceError as exc:
            self.task_run.report.halted = True
            self.task_run.report.halt_step = self.task_run.global_step
            self.task_run.report.halt_reason = str(exc)
            self.task_run.report.wall_time_s += time.perf_counter() - started
            self._finish_stage()
            return self.step_episode()
        self.task_run.report.wall_time_s += time.perf_counter() - started
        if self.task_run.episode_index >= self.cfg.episodes_for(self.current_task_id):
            self._finish_stage()
        return summary


def run_continual(cfg: ExperimentConfig, variant: str = VARIANT_MBRL, *,
                  master_seed: int | None = None, metrics_sink=None,
                  on_episode=None) -> list[StageReport]:
    """Drive the 1 -> 2 -> 3 sequence to completion and return its reports."""
    run = ContinualRun(cfg, variant, master_seed)
    while not run.done:
        summary = run.step_episode()
        if summary is not None and metrics_sink is not None:
            metrics_sink(summary)
        if on_episode is not None:
            on_episode(run)
    return run.reports
