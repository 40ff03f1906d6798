"""Hypernetwork world model: generates per-layer parameters of a dynamics
target and a reward target, conditioned on task one-hot, layer one-hot and
Gaussian noise.

Both targets share one input layout, in this order:

    [zone_temp, forecast_first, cooling_sp, heating_sp, a1, a2, a3]

Temperatures (zone temp, forecast, both setpoints and the predicted next zone
temp) are normalized as (T - 20)/10; actions are already in [0, 1]; rewards
are divided by 1.0 K*h.  Predictions are denormalized back on the way out.

Layer ids enumerate the dynamics target's layers first, then the reward
target's, so one hypernetwork serves both; its output head is as wide as the
largest per-layer parameter chunk and each generated layer reads its own
prefix of that head.

Only the hypernetwork is trained: prediction losses are backpropagated through
the assembled target parameters into the hypernet outputs, never into any
stored target.  Training adds a continual-learning regularizer that anchors
the zero-noise generated parameters of every completed task to a snapshot
taken at that task's boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import diffnet
from .diffnet import AdamState, NetSpec
from .envsim import TEMP_CLAMP_C, TaskSpec, Transition, apply_defaults
from .errors import ContractViolationError, TrainingDivergenceError
from .sac import ActionGrid, discretize
from .seeding import derive_seed

TARGET_KINDS = ("dynamics", "reward")
NUM_TASKS = 3


@dataclass(frozen=True)
class NormProfile:
    """Input/output normalization constants shared by both targets."""

    temp_center_c: float = 20.0
    temp_scale_c: float = 10.0
    reward_scale: float = 1.0


@dataclass(frozen=True)
class TargetSpec:
    """Architectures of the generated next-temperature and reward networks."""

    dynamics: NetSpec
    reward: NetSpec

    def __post_init__(self):
        for kind in TARGET_KINDS:
            spec = getattr(self, kind)
            if spec.in_dim != 7 or spec.out_dim != 1:
                raise ContractViolationError(f"{kind} target must map 7 inputs to 1 output")

    @classmethod
    def default(cls, hidden: tuple[int, ...] = (32, 32)) -> "TargetSpec":
        return cls(NetSpec.mlp(7, hidden, 1), NetSpec.mlp(7, hidden, 1))

    def spec_for(self, kind: str) -> NetSpec:
        if kind not in TARGET_KINDS:
            raise ContractViolationError(f"unknown target kind {kind!r}")
        return getattr(self, kind)


@dataclass(frozen=True)
class ChunkEntry:
    """One generated layer: which target it belongs to and where it lands."""

    kind: str
    layer: int
    offset: int  # into the target's flat ParamVector
    size: int


def _chunk_table(targets: TargetSpec) -> tuple[ChunkEntry, ...]:
    entries = []
    for kind in TARGET_KINDS:
        spec = targets.spec_for(kind)
        offset = 0
        for layer, count in enumerate(spec.layer_param_counts()):
            entries.append(ChunkEntry(kind, layer, offset, count))
            offset += count
    return tuple(entries)


@dataclass(eq=False)
class HypernetState:
    """Hypernetwork parameters plus the bookkeeping to slice its outputs."""

    targets: TargetSpec
    hyper_spec: NetSpec
    params: np.ndarray
    adam: AdamState
    noise_dim: int
    noise_sigma: float
    norm: NormProfile
    chunks: tuple[ChunkEntry, ...]

    @property
    def num_layer_ids(self) -> int:
        return len(self.chunks)

    @property
    def conditioning_dim(self) -> int:
        return NUM_TASKS + self.num_layer_ids + self.noise_dim

    @property
    def head_size(self) -> int:
        return max(e.size for e in self.chunks)


def hypernet_init(targets: TargetSpec | None = None, seed: int = 0,
                  hidden: tuple[int, ...] = (128, 128), noise_dim: int = 8,
                  noise_sigma: float = 0.1, norm: NormProfile = NormProfile()) -> HypernetState:
    targets = targets or TargetSpec.default()
    chunks = _chunk_table(targets)
    cond_dim = NUM_TASKS + len(chunks) + noise_dim
    head = max(e.size for e in chunks)
    hyper_spec = NetSpec.mlp(cond_dim, hidden, head)
    params = diffnet.mlp_init(hyper_spec, derive_seed(seed, "hypernet"))
    return HypernetState(
        targets=targets,
        hyper_spec=hyper_spec,
        params=params,
        adam=AdamState.for_params(diffnet.param_count(hyper_spec)),
        noise_dim=noise_dim,
        noise_sigma=noise_sigma,
        norm=norm,
        chunks=chunks,
    )


def encode_condition(task_id: int, layer_id: int, noise, num_layer_ids: int) -> np.ndarray:
    """[one_hot(task), one_hot(layer), noise] concatenated."""
    if task_id not in (1, 2, 3):
        raise ContractViolationError(f"task_id must be 1..3, got {task_id}")
    if not 0 <= layer_id < num_layer_ids:
        raise ContractViolationError(f"layer_id {layer_id} out of range [0, {num_layer_ids})")
    noise = np.asarray(noise, dtype=np.float64).ravel()
    cond = np.zeros(NUM_TASKS + num_layer_ids + noise.size)
    cond[task_id - 1] = 1.0
    cond[NUM_TASKS + layer_id] = 1.0
    cond[NUM_TASKS + num_layer_ids:] = noise
    return cond


def _condition_rows(h: HypernetState, task_ids: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Stack conditioning rows for every (variant, layer_id) pair.

    task_ids has shape (n,), noise (n, noise_dim); the result has n * L rows
    ordered variant-major, layer-minor.
    """
    n = task_ids.shape[0]
    ell = h.num_layer_ids
    rows = np.zeros((n * ell, h.conditioning_dim))
    arange = np.arange(ell)
    for v in range(n):
        block = rows[v * ell : (v + 1) * ell]
        block[:, int(task_ids[v]) - 1] = 1.0
        block[arange, NUM_TASKS + arange] = 1.0
        block[:, NUM_TASKS + ell:] = noise[v]
    return rows


def _assemble(h: HypernetState, head_block: np.ndarray) -> dict[str, np.ndarray]:
    """Slice one variant's (L, head) hypernet outputs into target ParamVectors."""
    out = {
        kind: np.zeros(diffnet.param_count(h.targets.spec_for(kind)))
        for kind in TARGET_KINDS
    }
    for layer_id, entry in enumerate(h.chunks):
        out[entry.kind][entry.offset : entry.offset + entry.size] = head_block[layer_id, :entry.size]
    return out


def _scatter(h: HypernetState, kind: str, grad_target: np.ndarray,
             grad_rows: np.ndarray) -> None:
    """Route a target-parameter gradient back onto the hypernet output rows."""
    for layer_id, entry in enumerate(h.chunks):
        if entry.kind == kind:
            grad_rows[layer_id, :entry.size] += grad_target[entry.offset : entry.offset + entry.size]


def _generate_stack(h: HypernetState, task_ids: np.ndarray,
                    noise: np.ndarray) -> dict[str, np.ndarray]:
    """Generate n variants at once: {'dynamics': (n, Pd), 'reward': (n, Pr)}."""
    n = task_ids.shape[0]
    rows = _condition_rows(h, task_ids, noise)
    head = diffnet.mlp_forward(h.hyper_spec, h.params, rows)
    head = head.reshape(n, h.num_layer_ids, h.head_size)
    stacks = {
        kind: np.zeros((n, diffnet.param_count(h.targets.spec_for(kind))))
        for kind in TARGET_KINDS
    }
    for layer_id, entry in enumerate(h.chunks):
        stacks[entry.kind][:, entry.offset : entry.offset + entry.size] = head[:, layer_id, :entry.size]
    return stacks


@dataclass(frozen=True, eq=False)
class GeneratedTarget:
    """A target network's parameters produced for one (task, noise) pair."""

    kind: str
    task_id: int
    noise: tuple[float, ...]
    spec: NetSpec
    params: np.ndarray

    def __post_init__(self):
        if self.params.shape != (diffnet.param_count(self.spec),):
            raise ContractViolationError("assembled length does not match the target spec")


def generate_target(h: HypernetState, target: str, task_id: int, noise) -> GeneratedTarget:
    """One hypernet pass per layer id, sliced and assembled; pure in its inputs."""
    spec = h.targets.spec_for(target)
    noise = np.asarray(noise, dtype=np.float64).ravel()
    if noise.size != h.noise_dim:
        raise ContractViolationError(f"noise must have length {h.noise_dim}, got {noise.size}")
    stacks = _generate_stack(h, np.array([task_id]), noise[None, :])
    params = stacks[target][0].copy()
    params.flags.writeable = False
    return GeneratedTarget(target, task_id, tuple(noise), spec, params)


def _normalize_state_action(x, norm: NormProfile) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    out[..., :4] = (x[..., :4] - norm.temp_center_c) / norm.temp_scale_c
    return out


def _denormalize(kind: str, y, norm: NormProfile):
    if kind == "dynamics":
        return y * norm.temp_scale_c + norm.temp_center_c
    return y * norm.reward_scale


def target_predict(generated: GeneratedTarget, norm: NormProfile, state_action) -> float:
    """Plain forward pass through generated parameters; raw units in and out."""
    x = _normalize_state_action(state_action, norm)
    if x.shape != (7,):
        raise ContractViolationError(f"state_action must have 7 entries, got {x.shape}")
    y = diffnet.mlp_forward(generated.spec, np.asarray(generated.params), x)
    return float(_denormalize(generated.kind, y[0], norm))


def _forward_many(spec: NetSpec, params_stack: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate n generated networks on a shared (m, in) batch -> (n, m, out)."""
    n = params_stack.shape[0]
    offset = 0
    a = None
    for (out_dim, in_dim), act in zip(spec.layer_shapes(), spec.activations):
        w = params_stack[:, offset : offset + out_dim * in_dim].reshape(n, out_dim, in_dim)
        offset += out_dim * in_dim
        b = params_stack[:, offset : offset + out_dim]
        offset += out_dim
        if a is None:
            z = np.einsum("mi,noi->nmo", x, w) + b[:, None, :]
        else:
            z = np.einsum("nmi,noi->nmo", a, w) + b[:, None, :]
        a = diffnet._activate(act, z)
    return a


def _ensemble_raw(h: HypernetState, target: str, task_id: int, x_raw: np.ndarray,
                  n_models: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Denormalized ensemble (means, stds) over a batch of raw state-actions."""
    if n_models < 1:
        raise ContractViolationError("n_models must be >= 1")
    spec = h.targets.spec_for(target)
    noise = h.noise_sigma * rng.standard_normal((n_models, h.noise_dim))
    stacks = _generate_stack(h, np.full(n_models, task_id), noise)
    x = _normalize_state_action(np.atleast_2d(x_raw), h.norm)
    preds = _forward_many(spec, stacks[target], x)[:, :, 0]  # (n_models, m)
    preds = _denormalize(target, preds, h.norm)
    return preds.mean(axis=0), preds.std(axis=0)


def ensemble_predict(h: HypernetState, target: str, task_id: int, state_action,
                     n_models: int = 100,
                     rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Mean and standard deviation over n_models independent noise draws."""
    if rng is None:
        raise ContractViolationError("ensemble_predict needs an rng")
    means, stds = _ensemble_raw(h, target, task_id, np.asarray(state_action, dtype=np.float64),
                                n_models, rng)
    return float(means[0]), float(stds[0])


@dataclass(frozen=True, eq=False)
class RegularizationSnapshot:
    """Zero-noise generated parameters per completed task, frozen at capture."""

    entries: dict[int, dict[str, np.ndarray]]

    @property
    def task_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.entries))

    def params(self, task_id: int, kind: str) -> np.ndarray:
        return self.entries[task_id][kind]

    @classmethod
    def empty(cls) -> "RegularizationSnapshot":
        return cls({})


def capture_snapshot(h: HypernetState, completed_task_ids) -> RegularizationSnapshot:
    """Freeze zero-noise targets for every completed task (both target kinds)."""
    entries = {}
    zero = np.zeros(h.noise_dim)
    for tid in sorted(set(int(t) for t in completed_task_ids)):
        stacks = _generate_stack(h, np.array([tid]), zero[None, :])
        per_kind = {}
        for kind in TARGET_KINDS:
            arr = stacks[kind][0].copy()
            arr.flags.writeable = False
            per_kind[kind] = arr
        entries[tid] = per_kind
    return RegularizationSnapshot(entries)


def _model_arrays(batch: list[Transition], norm: NormProfile):
    """Normalized (inputs, dynamics targets, reward targets) with per-transition cache."""
    xs, y_dyn, y_rew = [], [], []
    for t in batch:
        if t.model_cache is None:
            heating_sp, cooling_sp = t.setpoints
            raw = np.array([
                t.obs.zone_temp_c, t.obs.forecast_c[0], cooling_sp, heating_sp,
                *t.actions,
            ])
            t.model_cache = (
                _normalize_state_action(raw, norm),
                (t.next_obs.zone_temp_c - norm.temp_center_c) / norm.temp_scale_c,
                t.reward / norm.reward_scale,
            )
        x, yd, yr = t.model_cache
        xs.append(x)
        y_dyn.append(yd)
        y_rew.append(yr)
    return np.stack(xs), np.array(y_dyn), np.array(y_rew)


@dataclass(frozen=True)
class HypernetLosses:
    mse_dynamics: float
    mse_reward: float
    regularization: float
    total: float


def _loss_and_grad(h: HypernetState, batch: list[Transition],
                   snapshot: RegularizationSnapshot, beta: float,
                   noise: np.ndarray) -> tuple[HypernetLosses, np.ndarray]:
    """Full training loss and its exact gradient w.r.t. the hypernet parameters.

    Each sampled transition is conditioned on its own stored task tag; the
    regularizer compares current zero-noise generations against the snapshot.
    """
    ell = h.num_layer_ids
    sample_tasks = np.array([t.task_id for t in batch])
    group_tids = sorted(set(int(t) for t in sample_tasks))
    prev_tids = list(snapshot.task_ids)

    variants = np.array(group_tids + prev_tids, dtype=np.int64)
    noise_rows = np.zeros((variants.size, h.noise_dim))
    noise_rows[: len(group_tids)] = noise  # zero noise for snapshot comparisons
    rows = _condition_rows(h, variants, noise_rows)
    head, hyper_cache = diffnet.forward_cached(h.hyper_spec, h.params, rows)
    head = head.reshape(variants.size, ell, h.head_size)
    grad_head = np.zeros_like(head)

    xs, y_dyn, y_rew = _model_arrays(batch, h.norm)
    n_total = len(batch)
    sq_err = {"dynamics": 0.0, "reward": 0.0}
    targets_y = {"dynamics": y_dyn, "reward": y_rew}

    for gi, tid in enumerate(group_tids):
        mask = sample_tasks == tid
        x_g = xs[mask]
        generated = _assemble(h, head[gi])
        for kind in TARGET_KINDS:
            spec = h.targets.spec_for(kind)
            pred, cache = diffnet.forward_cached(spec, generated[kind], x_g)
            residual = pred[:, 0] - targets_y[kind][mask]
            sq_err[kind] += float(np.sum(residual * residual))
            grad_params, _ = diffnet.backward(
                spec, generated[kind], cache, (2.0 * residual / n_total)[:, None]
            )
            _scatter(h, kind, grad_params, grad_head[gi])

    reg_total = 0.0
    for pi, tid in enumerate(prev_tids):
        vi = len(group_tids) + pi
        generated = _assemble(h, head[vi])
        for kind in TARGET_KINDS:
            diff = generated[kind] - snapshot.params(tid, kind)
            reg_total += float(np.mean(diff * diff))
            _scatter(h, kind, beta * 2.0 * diff / diff.size, grad_head[vi])

    grad, _ = diffnet.backward(h.hyper_spec, h.params, hyper_cache,
                               grad_head.reshape(rows.shape[0], h.head_size))
    mse_dyn = sq_err["dynamics"] / n_total
    mse_rew = sq_err["reward"] / n_total
    losses = HypernetLosses(mse_dyn, mse_rew, reg_total,
                            mse_dyn + mse_rew + beta * reg_total)
    return losses, grad


def hypernet_train_step(h: HypernetState, batch: list[Transition], task_id: int,
                        snapshot: RegularizationSnapshot, beta: float = 0.1,
                        lr: float = 1e-4,
                        rng: np.random.Generator | None = None) -> HypernetLosses:
    """One Adam step on MSE(dynamics) + MSE(reward) + beta * snapshot anchor.

    One fresh noise draw is shared across the batch; for task 1 (empty
    snapshot) the regularization term is exactly zero.
    """
    if not batch:
        raise ContractViolationError("batch must be nonempty")
    if task_id not in (1, 2, 3):
        raise ContractViolationError(f"task_id must be 1..3, got {task_id}")
    if rng is None:
        raise ContractViolationError("hypernet_train_step needs an rng")
    noise = h.noise_sigma * rng.standard_normal(h.noise_dim)
    losses, grad = _loss_and_grad(h, batch, snapshot, beta, noise)
    if not np.isfinite(losses.total):
        raise TrainingDivergenceError(f"non-finite hypernet loss: {losses}")
    h.params, h.adam = diffnet.adam_step(h.params, grad, h.adam, lr)
    return losses


def model_error(h: HypernetState, batch: list[Transition], target: str = "dynamics") -> float:
    """Zero-noise one-step prediction MSE (normalized units) on held-out data."""
    xs, y_dyn, y_rew = _model_arrays(batch, h.norm)
    y = {"dynamics": y_dyn, "reward": y_rew}[target]
    sample_tasks = np.array([t.task_id for t in batch])
    err = 0.0
    for tid in sorted(set(int(t) for t in sample_tasks)):
        mask = sample_tasks == tid
        stacks = _generate_stack(h, np.array([tid]), np.zeros((1, h.noise_dim)))
        pred = diffnet.mlp_forward(h.targets.spec_for(target), stacks[target][0], xs[mask])
        err += float(np.sum((pred[:, 0] - y[mask]) ** 2))
    return err / len(batch)


def synthetic_rollouts(h: HypernetState, task: TaskSpec, samples: list[Transition],
                       policy_fn, rng: np.random.Generator, n_models: int = 100,
                       grid: ActionGrid = ActionGrid()) -> list[Transition]:
    """One-step model rollouts from replayed real states.

    Fresh stochastic policy actions are discretized and completed with the
    task's defaults; one shared n_models ensemble predicts all rollouts of the
    call.  Predicted temperatures are clamped to the physical range and
    rewards to <= 0, and the result is flagged synthetic.
    """
    if not samples:
        return []
    a_cont = np.atleast_2d(policy_fn([s.obs for s in samples]))
    if a_cont.shape != (len(samples), task.action_dim):
        raise ContractViolationError(
            f"policy returned shape {a_cont.shape}, task needs (*, {task.action_dim})"
        )
    full_actions = [
        apply_defaults(task, discretize(row, grid)) for row in a_cont
    ]
    x_raw = np.stack([
        np.array([
            s.obs.zone_temp_c, s.obs.forecast_c[0], s.setpoints[1], s.setpoints[0],
            *full_actions[i],
        ])
        for i, s in enumerate(samples)
    ])
    temp_mean, _ = _ensemble_raw(h, "dynamics", task.task_id, x_raw, n_models, rng)
    reward_mean, _ = _ensemble_raw(h, "reward", task.task_id, x_raw, n_models, rng)

    out = []
    for i, s in enumerate(samples):
        t_next = float(np.clip(temp_mean[i], *TEMP_CLAMP_C))
        out.append(Transition(
            obs=s.obs,
            actions=full_actions[i],
            next_obs=replace(s.next_obs, zone_temp_c=t_next),
            reward=min(float(reward_mean[i]), 0.0),
            setpoints=s.setpoints,
            task_id=task.task_id,
            policy_action=tuple(float(a) for a in a_cont[i]),
            synthetic=True,
        ))
    return out


def synthetic_rollout(h: HypernetState, task: TaskSpec, real_state_sample: Transition,
                      policy_fn, rng: np.random.Generator, n_models: int = 100,
                      grid: ActionGrid = ActionGrid()) -> Transition:
    """Single-rollout form of synthetic_rollouts (same code path)."""
    return synthetic_rollouts(h, task, [real_state_sample], policy_fn, rng,
                              n_models=n_models, grid=grid)[0]
