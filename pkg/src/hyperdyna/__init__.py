"""Continual model-based reinforcement learning for thermal-zone control.

A SAC agent is trained Dyna-style against a hypernetwork-generated world model
across three sequential tasks with different action spaces, on a deterministic
single-zone RC thermal surrogate.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config, save_config
from .diffnet import AdamState, NetSpec, adam_step, mlp_forward, mlp_gradient, mlp_init
from .dyna import (BufferSet, ContinualRun, ReplayBuffer, StageReport, buffer_push,
                   mixed_batch, run_continual, run_task)
from .envsim import (EnvParams, EnvState, Observation, TaskSpec, Transition,
                     apply_defaults, discomfort_reward, env_reset, env_step,
                     outdoor_temp, setpoint_schedule)
from .hyperworld import (GeneratedTarget, HypernetState, RegularizationSnapshot,
                         TargetSpec, capture_snapshot, encode_condition,
                         ensemble_predict, generate_target, hypernet_init,
                         hypernet_train_step, synthetic_rollout, synthetic_rollouts,
                         target_predict)
from .runner import evaluate_checkpoint, run_experiment
from .sac import (ActionGrid, AgentState, discretize, policy_update_gate, sac_init,
                  sac_update, select_action)

__all__ = [name for name in dir() if not name.startswith("_")]
