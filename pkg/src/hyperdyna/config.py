"""Experiment configuration: every hyperparameter with its standard default,
round-tripping losslessly through an INI-style sections file.

Defaults are the published experiment settings (discount 0.99, actor/critic
learning rates 5e-5 / 2e-4, batch 1024, buffer capacities 35000/35000/4000,
hypernet learning rate 1e-4, policy update every 2 steps, regularization
coefficient 0.1, 1344 steps per episode, 10 synthetic samples per step, 100
ensemble models).  Anything can be overridden for smaller desk-scale runs.
"""

from __future__ import annotations

from configparser import ConfigParser
from dataclasses import dataclass, fields

from .envsim import EnvParams, load_weather_table
from .errors import ConfigError

VARIANTS = ("mbrl", "mfrl")


@dataclass(frozen=True)
class ExperimentConfig:
    # experiment
    master_seed: int = 0
    variants: tuple[str, ...] = ("mbrl", "mfrl")
    output_dir: str = "runs/default"
    scenario: str = "january_like"
    episode_budgets: tuple[int, int, int] = (30, 30, 5)
    checkpoint_every_episodes: int = 0  # 0 = checkpoint only at run end
    weather_override: str = ""  # optional CSV path (time_s, temp_c)
    # sac
    gamma: float = 0.99
    lr_actor: float = 0.00005
    lr_critic: float = 0.0002
    lr_alpha: float = 0.0  # 0 = use lr_actor
    tau: float = 0.005
    actor_hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (64, 64)
    policy_update_every: int = 2
    action_grid_levels: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    # hypernet / world model
    lr_hypernet: float = 0.0001
    reg_beta: float = 0.1
    noise_dim: int = 8
    noise_sigma: float = 0.1
    ensemble_models: int = 100
    synthetic_per_step: int = 10
    hypernet_hidden: tuple[int, ...] = (128, 128)
    target_hidden: tuple[int, ...] = (32, 32)
    hypernet_warmup: int = 1024
    real_fraction: float = 0.5
    # buffers / batching
    batch_size: int = 1024
    buffer_real: int = 35000
    buffer_synthetic: int = 35000
    buffer_hypernet: int = 4000
    # environment
    steps_per_episode: int = 1344
    weather_noise_sigma_c: float = 0.5

    def validate(self) -> None:
        for name in ("batch_size", "buffer_real", "buffer_synthetic", "buffer_hypernet",
                     "steps_per_episode", "synthetic_per_step", "ensemble_models",
                     "policy_update_every", "hypernet_warmup", "noise_dim"):
            if int(getattr(self, name)) < (0 if name == "noise_dim" else 1):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.real_fraction <= 1.0:
            raise ConfigError(f"real_fraction must lie in [0, 1], got {self.real_fraction}")
        if self.scenario not in ("january_like", "april_like"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}")
        if len(self.episode_budgets) != 3 or any(e < 1 for e in self.episode_budgets):
            raise ConfigError(f"episode_budgets needs three positive entries, got {self.episode_budgets}")

    def episodes_for(self, task_id: int) -> int:
        return int(self.episode_budgets[task_id - 1])

    def env_params(self) -> EnvParams:
        table = load_weather_table(self.weather_override) if self.weather_override else None
        return EnvParams(
            steps_per_episode=int(self.steps_per_episode),
            weather_noise_sigma_c=float(self.weather_noise_sigma_c),
            weather_table=table,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


_SECTIONS = {
    "experiment": ("master_seed", "variants", "output_dir", "scenario", "episode_budgets",
                   "checkpoint_every_episodes", "weather_override"),
    "sac": ("gamma", "lr_actor", "lr_critic", "lr_alpha", "tau", "actor_hidden",
            "critic_hidden", "policy_update_every", "action_grid_levels"),
    "hypernet": ("lr_hypernet", "reg_beta", "noise_dim", "noise_sigma", "ensemble_models",
                 "synthetic_per_step", "hypernet_hidden", "target_hidden",
                 "hypernet_warmup", "real_fraction"),
    "buffers": ("batch_size", "buffer_real", "buffer_synthetic", "buffer_hypernet"),
    "env": ("steps_per_episode", "weather_noise_sigma_c"),
}

_DEFAULTS = ExperimentConfig()


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_like(text: str, template):
    if isinstance(template, tuple):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        elem = template[0] if template else ""
        return tuple(_parse_like(p, elem) for p in parts)
    if isinstance(template, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(template, int):
        return int(text.strip())
    if isinstance(template, float):
        return float(text.strip())
    return text.strip()


def config_to_ini(config: ExperimentConfig) -> str:
    lines = []
    for section, names in _SECTIONS.items():
        lines.append(f"[{section}]")
        for name in names:
            lines.append(f"{name} = {_format_value(getattr(config, name))}")
        lines.append("")
    return "\n".join(lines)


def _line_of(text: str, key: str) -> int | None:
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip().lower().startswith(key.lower()):
            return lineno
    return None


def config_from_ini(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = ConfigParser()
    try:
        parser.read_string(text, source=source)
    except Exception as exc:  # configparser errors carry line info already
        raise ConfigError(f"{source}: {exc}") from exc
    values = {}
    known = {name: section for section, names in _SECTIONS.items() for name in names}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in known or known[key] != section:
                line = _line_of(text, key)
                raise ConfigError(f"{source}:{line}: unknown key {key!r} in [{section}]")
            template = getattr(_DEFAULTS, key)
            try:
                values[key] = _parse_like(raw, template)
            except ValueError as exc:
                line = _line_of(text, key)
                raise ConfigError(f"{source}:{line}: bad value for {key}: {exc}") from exc
    config = ExperimentConfig(**values)
    try:
        config.validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return config


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_ini(text, source=str(path))


def save_config(config: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_ini(config))
