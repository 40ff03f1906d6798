"""Soft Actor-Critic over the zone observation, composed from diffnet primitives.

The actor maps observation features to a Gaussian head (mean and log-std per
action); samples are squashed by tanh and affinely mapped from [-1, 1] to
[0, 1].  Twin critics score (features, action); targets use the minimum of the
target twins plus the entropy bonus.  The entropy coefficient is tuned
automatically against a target entropy of -action_dim.

Observation features are [time_sin, time_cos, (T_zone - 20)/10] followed by
the forecast temperatures, each normalized as (T - 20)/10.

All gradients are assembled by explicit chain rule on top of diffnet's
forward/backward, never by finite differences; reparameterized actor gradients
flow through the critic's action input and through the tanh squash.

Environments receive discretized actions (``discretize`` snaps onto an
ActionGrid), while the continuous pre-squash sample is what replay stores and
the critics consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffnet
from .diffnet import AdamState, NetSpec
from .envsim import Observation, Transition
from .errors import ContractViolationError, TrainingDivergenceError
from .seeding import derive_seed

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_SQUASH_EPS = 1e-6
_LOG_2PI = float(np.log(2.0 * np.pi))

TEMP_CENTER_C = 20.0
TEMP_SCALE_C = 10.0


def obs_features(obs: Observation) -> np.ndarray:
    return np.array(
        [obs.time_sin, obs.time_cos, (obs.zone_temp_c - TEMP_CENTER_C) / TEMP_SCALE_C]
        + [(f - TEMP_CENTER_C) / TEMP_SCALE_C for f in obs.forecast_c]
    )


def obs_dim(forecast_steps: int = 4) -> int:
    return 3 + forecast_steps


def _batch_obs_features(batch: list[Transition]) -> np.ndarray:
    for t in batch:
        if t.obs_feat is None:
            t.obs_feat = obs_features(t.obs)
    return np.stack([t.obs_feat for t in batch])


def _batch_next_features(batch: list[Transition]) -> np.ndarray:
    for t in batch:
        if t.next_obs_feat is None:
            t.next_obs_feat = obs_features(t.next_obs)
    return np.stack([t.next_obs_feat for t in batch])


@dataclass(frozen=True)
class ActionGrid:
    """Discrete levels the environment accepts, sorted ascending in [0, 1]."""

    levels: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        lv = tuple(float(x) for x in self.levels)
        object.__setattr__(self, "levels", lv)
        if not lv:
            raise ContractViolationError("grid needs at least one level")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ContractViolationError("grid levels must be strictly increasing")
        if lv[0] < 0.0 or lv[-1] > 1.0:
            raise ContractViolationError("grid levels must lie in [0, 1]")


def discretize(action, grid: ActionGrid) -> np.ndarray:
    """Snap each component to the nearest grid level, ties toward the lower one."""
    a = np.atleast_1d(np.asarray(action, dtype=np.float64))
    levels = np.asarray(grid.levels)
    # argmin returns the first (lower) index on exact ties
    idx = np.abs(a[:, None] - levels[None, :]).argmin(axis=1)
    return levels[idx]


@dataclass(eq=False)
class AgentState:
    """Parameters and optimizer state for one task's SAC agent."""

    obs_dim: int
    action_dim: int
    actor_spec: NetSpec
    critic_spec: NetSpec
    actor: np.ndarray
    critic1: np.ndarray
    critic2: np.ndarray
    target_critic1: np.ndarray
    target_critic2: np.ndarray
    adam_actor: AdamState
    adam_critic1: AdamState
    adam_critic2: AdamState
    log_entropy_coeff: float
    adam_entropy: AdamState
    target_entropy: float

    @property
    def entropy_coeff(self) -> float:
        return float(np.exp(self.log_entropy_coeff))


@dataclass(frozen=True)
class SacLosses:
    critic1: float
    critic2: float
    actor: float
    entropy_coeff: float  # loss of the entropy-coefficient objective
    alpha: float  # current exp(log_entropy_coeff)


def sac_init(obs_dim: int, action_dim: int, seed: int,
             hidden: tuple[int, ...] = (64, 64)) -> AgentState:
    """Fresh agent; networks drawn from child seeds of ``seed``."""
    if obs_dim < 1 or action_dim < 1:
        raise ContractViolationError("obs_dim and action_dim must be >= 1")
    actor_spec = NetSpec.mlp(obs_dim, hidden, 2 * action_dim)
    critic_spec = NetSpec.mlp(obs_dim + action_dim, hidden, 1)
    critic1 = diffnet.mlp_init(critic_spec, derive_seed(seed, "critic1"))
    critic2 = diffnet.mlp_init(critic_spec, derive_seed(seed, "critic2"))
    return AgentState(
        obs_dim=obs_dim,
        action_dim=action_dim,
        actor_spec=actor_spec,
        critic_spec=critic_spec,
        actor=diffnet.mlp_init(actor_spec, derive_seed(seed, "actor")),
        critic1=critic1,
        critic2=critic2,
        target_critic1=critic1.copy(),
        target_critic2=critic2.copy(),
        adam_actor=AdamState.for_params(diffnet.param_count(actor_spec)),
        adam_critic1=AdamState.for_params(diffnet.param_count(critic_spec)),
        adam_critic2=AdamState.for_params(diffnet.param_count(critic_spec)),
        log_entropy_coeff=0.0,
        adam_entropy=AdamState.for_params(1),
        target_entropy=-float(action_dim),
    )


def _head_split(agent: AgentState, head: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d = agent.action_dim
    mu = head[:, :d]
    raw = head[:, d:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    gate = ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)).astype(np.float64)
    return mu, log_std, gate


def _squash(mu: np.ndarray, log_std: np.ndarray, eps: np.ndarray):
    """Reparameterized sample through tanh and the [0,1] affine map.

    Returns (a01, log_prob per sample, tanh_u); log_prob includes the tanh
    change of variables and the +log 2 per dimension from the halving map.
    """
    std = np.exp(log_std)
    u = mu + std * eps
    t = np.tanh(u)
    a01 = 0.5 * (t + 1.0)
    log_prob = np.sum(
        -0.5 * eps * eps - log_std - 0.5 * _LOG_2PI
        - np.log(1.0 - t * t + _SQUASH_EPS) + np.log(2.0),
        axis=1,
    )
    return a01, log_prob, t


def select_action(agent: AgentState, obs: Observation, mode: str,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """One action in [0,1]^action_dim; 'deterministic' uses the tanh'd mean."""
    feats = obs_features(obs)[None, :]
    if feats.shape[1] != agent.obs_dim:
        raise ContractViolationError(
            f"observation has {feats.shape[1]} features, agent expects {agent.obs_dim}"
        )
    head = diffnet.mlp_forward(agent.actor_spec, agent.actor, feats)
    mu, log_std, _ = _head_split(agent, head)
    if mode == "deterministic":
        eps = np.zeros_like(mu)
    elif mode == "stochastic":
        if rng is None:
            raise ContractViolationError("stochastic mode needs an rng")
        eps = rng.standard_normal(mu.shape)
    else:
        raise ContractViolationError(f"unknown mode {mode!r}")
    a01, _, _ = _squash(mu, log_std, eps)
    return a01[0]


def policy_sampler(agent: AgentState, rng: np.random.Generator):
    """Batched stochastic policy callable used by synthetic rollouts."""

    def sample(obs_list: list[Observation]) -> np.ndarray:
        feats = np.stack([obs_features(o) for o in obs_list])
        head = diffnet.mlp_forward(agent.actor_spec, agent.actor, feats)
        mu, log_std, _ = _head_split(agent, head)
        a01, _, _ = _squash(mu, log_std, rng.standard_normal(mu.shape))
        return a01

    return sample


def _actor_loss_and_grad(agent: AgentState, feats: np.ndarray, eps: np.ndarray,
                         alpha: float):
    """Reparameterized actor loss, its gradient, and the sampled log-probs.

    Split out so tests can check the full composite gradient against central
    finite differences with the noise draw held fixed.
    """
    batch = feats.shape[0]
    head, actor_cache = diffnet.forward_cached(agent.actor_spec, agent.actor, feats)
    mu, log_std, gate = _head_split(agent, head)
    std = np.exp(log_std)
    a01, log_prob, t = _squash(mu, log_std, eps)

    q_in = np.concatenate([feats, a01], axis=1)
    q1, c1_cache = diffnet.forward_cached(agent.critic_spec, agent.critic1, q_in)
    q2, c2_cache = diffnet.forward_cached(agent.critic_spec, agent.critic2, q_in)
    take1 = (q1 <= q2).astype(np.float64)
    q_min = np.minimum(q1, q2)

    loss = float(np.mean(alpha * log_prob - q_min[:, 0]))

    # d(-mean q_sel)/d input, routed through whichever critic won the min
    _, gin1 = diffnet.backward(agent.critic_spec, agent.critic1, c1_cache, -take1 / batch)
    _, gin2 = diffnet.backward(agent.critic_spec, agent.critic2, c2_cache, -(1.0 - take1) / batch)
    g_action = (gin1 + gin2)[:, agent.obs_dim:]

    dlogp_du = 2.0 * t * (1.0 - t * t) / (1.0 - t * t + _SQUASH_EPS)
    da_du = 0.5 * (1.0 - t * t)
    g_mu = (alpha / batch) * dlogp_du + g_action * da_du
    g_log_std = ((alpha / batch) * (-1.0 + dlogp_du * std * eps)
                 + g_action * da_du * std * eps) * gate

    head_grad = np.concatenate([g_mu, g_log_std], axis=1)
    grad, _ = diffnet.backward(agent.actor_spec, agent.actor, actor_cache, head_grad)
    return loss, grad, log_prob


def sac_update(agent: AgentState, batch: list[Transition], *, gamma: float = 0.99,
               tau: float = 0.005, lr_actor: float = 5e-5, lr_critic: float = 2e-4,
               lr_alpha: float | None = None,
               rng: np.random.Generator | None = None) -> SacLosses:
    """One SAC step: twin critics, reparameterized actor, entropy coefficient,
    then soft target update.  Raises TrainingDivergenceError on non-finite loss.
    """
    if not batch:
        raise ContractViolationError("batch must be nonempty")
    if rng is None:
        raise ContractViolationError("sac_update needs an rng for reparameterization")
    if lr_alpha is None:
        lr_alpha = lr_actor
    n = len(batch)
    feats = _batch_obs_features(batch)
    next_feats = _batch_next_features(batch)
    actions = np.array([t.policy_action for t in batch], dtype=np.float64)
    if actions.shape != (n, agent.action_dim):
        raise ContractViolationError(
            f"batch actions have shape {actions.shape}, agent expects (*, {agent.action_dim})"
        )
    rewards = np.array([t.reward for t in batch])
    not_terminal = np.array([0.0 if t.terminal else 1.0 for t in batch])
    alpha = agent.entropy_coeff

    # TD target from the frozen twins and the current policy at the next state
    head2 = diffnet.mlp_forward(agent.actor_spec, agent.actor, next_feats)
    mu2, log_std2, _ = _head_split(agent, head2)
    a2, log_prob2, _ = _squash(mu2, log_std2, rng.standard_normal(mu2.shape))
    qt_in = np.concatenate([next_feats, a2], axis=1)
    qt1 = diffnet.mlp_forward(agent.critic_spec, agent.target_critic1, qt_in)[:, 0]
    qt2 = diffnet.mlp_forward(agent.critic_spec, agent.target_critic2, qt_in)[:, 0]
    target = rewards + gamma * not_terminal * (np.minimum(qt1, qt2) - alpha * log_prob2)

    q_in = np.concatenate([feats, actions], axis=1)
    critic_losses = []
    for which in ("critic1", "critic2"):
        params = getattr(agent, which)
        q, cache = diffnet.forward_cached(agent.critic_spec, params, q_in)
        residual = q[:, 0] - target
        critic_losses.append(float(np.mean(residual * residual)))
        grad, _ = diffnet.backward(agent.critic_spec, params, cache,
                                   (2.0 * residual / n)[:, None])
        adam = getattr(agent, f"adam_{which}")
        new_params, new_adam = diffnet.adam_step(params, grad, adam, lr_critic)
        setattr(agent, which, new_params)
        setattr(agent, f"adam_{which}", new_adam)

    eps = rng.standard_normal((n, agent.action_dim))
    actor_loss, actor_grad, log_prob = _actor_loss_and_grad(agent, feats, eps, alpha)
    agent.actor, agent.adam_actor = diffnet.adam_step(
        agent.actor, actor_grad, agent.adam_actor, lr_actor
    )

    # Entropy coefficient: minimize -log_alpha * mean(log_prob + target_entropy)
    ent_err = float(np.mean(log_prob + agent.target_entropy))
    ent_loss = -agent.log_entropy_coeff * ent_err
    log_alpha_arr, agent.adam_entropy = diffnet.adam_step(
        np.array([agent.log_entropy_coeff]), np.array([-ent_err]),
        agent.adam_entropy, lr_alpha,
    )
    agent.log_entropy_coeff = float(log_alpha_arr[0])

    agent.target_critic1 = (1.0 - tau) * agent.target_critic1 + tau * agent.critic1
    agent.target_critic2 = (1.0 - tau) * agent.target_critic2 + tau * agent.critic2

    losses = SacLosses(critic_losses[0], critic_losses[1], actor_loss, ent_loss,
                       agent.entropy_coeff)
    for value in (losses.critic1, losses.critic2, losses.actor, losses.entropy_coeff):
        if not np.isfinite(value):
            raise TrainingDivergenceError(f"non-finite SAC loss: {losses}")
    return losses


def policy_update_gate(step_index: int, every: int = 2) -> bool:
    """True on steps where the policy should update (every 2 steps by default)."""
    return step_index % every == 0
