"""Deterministic single-zone thermal surrogate with heat-pump control.

Zone dynamics are a lumped RC model stepped at a fixed interval:

    T' = T + (dt / C) * (UA * (T_out - T) + Q_max * a1 * (0.5 + 0.5 * a2) * a3)

with UA = 240 W/K envelope conductance, C = 12e6 J/K thermal capacitance,
Q_max = 9000 W heat-pump capacity and dt = 900 s.  a1 is the heat-pump
modulating signal, a2 the evaporator-fan signal (efficiency factor
0.5 + 0.5*a2), a3 the emission-circuit pump signal; all in [0, 1].

Outdoor temperature is a daily sinusoid plus seeded Gaussian noise:
mean -2 C / amplitude 4 C for the january_like scenario, mean 10 C /
amplitude 6 C for april_like, noise sigma 0.5 C, warmest at 15:00.
An optional comma-separated table (time_s, temp_c) replaces the generator.

Reward is negated thermal discomfort in Kelvin-hours: band violations against
the scheduled setpoints (occupied 07:00-22:00 -> 21/24 C, else 15/30 C),
scaled by dt/3600.  It is 0 inside the band and negative outside.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolationError, EpisodeExhaustedError

SECONDS_PER_DAY = 86400
TEMP_CLAMP_C = (-20.0, 60.0)

SCENARIOS = {
    "january_like": {"mean_c": -2.0, "amplitude_c": 4.0},
    "april_like": {"mean_c": 10.0, "amplitude_c": 6.0},
}

ACTION_NAMES = ("action1", "action2", "action3")


@dataclass(frozen=True)
class TaskSpec:
    """Which action slots the policy controls for one task of the sequence."""

    task_id: int
    policy_controlled: tuple[int, ...]  # indices into the 3-action vector

    def __post_init__(self):
        if self.task_id not in (1, 2, 3):
            raise ContractViolationError(f"task_id must be 1, 2 or 3, got {self.task_id}")
        expected = (0, 1, 2) if self.task_id == 2 else (0,)
        if tuple(self.policy_controlled) != expected:
            raise ContractViolationError(
                f"task {self.task_id} controls action slots {expected}"
            )

    @classmethod
    def for_task(cls, task_id: int) -> "TaskSpec":
        return cls(task_id, (0, 1, 2) if task_id == 2 else (0,))

    @property
    def action_dim(self) -> int:
        return len(self.policy_controlled)

    @property
    def one_hot(self) -> tuple[float, float, float]:
        oh = [0.0, 0.0, 0.0]
        oh[self.task_id - 1] = 1.0
        return tuple(oh)


@dataclass(frozen=True)
class WeatherTable:
    """Outdoor-temperature override: piecewise-linear in time."""

    times_s: tuple[float, ...]
    temps_c: tuple[float, ...]

    def temp_at(self, sim_time_s: float) -> float:
        return float(np.interp(sim_time_s, self.times_s, self.temps_c))


def load_weather_table(path) -> WeatherTable:
    """Read a comma-separated table with columns time_s, temp_c."""
    times, temps = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if lineno == 1 and parts[0].strip().lower() == "time_s":
                continue
            if len(parts) != 2:
                raise ContractViolationError(f"{path}:{lineno}: expected 'time_s,temp_c'")
            times.append(float(parts[0]))
            temps.append(float(parts[1]))
    if not times:
        raise ContractViolationError(f"{path}: empty weather table")
    return WeatherTable(tuple(times), tuple(temps))


@dataclass(frozen=True)
class EnvParams:
    """Physical constants, schedule and weather knobs of the surrogate zone."""

    ua_w_per_k: float = 240.0
    capacitance_j_per_k: float = 12e6
    heat_pump_max_w: float = 9000.0
    dt_s: float = 900.0
    steps_per_episode: int = 1344
    initial_zone_temp_c: float = 20.0
    default_a2: float = 1.0
    default_a3: float = 1.0
    occupied_start_h: float = 7.0
    occupied_end_h: float = 22.0
    occupied_band_c: tuple[float, float] = (21.0, 24.0)
    unoccupied_band_c: tuple[float, float] = (15.0, 30.0)
    weather_noise_sigma_c: float = 0.5
    weather_peak_hour: float = 15.0
    forecast_steps: int = 4
    weather_table: WeatherTable | None = None


@dataclass(frozen=True)
class Observation:
    """What the control policy sees: clock phase, zone temp, weather ahead."""

    time_sin: float
    time_cos: float
    zone_temp_c: float
    forecast_c: tuple[float, ...]


@dataclass
class Transition:
    """One experience tuple; the unit stored in every replay buffer.

    ``actions`` is the full 3-vector actually applied (defaults filled in);
    ``policy_action`` is the continuous pre-discretization sample for the
    policy-controlled slots only, which SAC replays for gradient flow.
    Cache fields hold derived feature arrays so replay batches assemble fast.
    """

    obs: Observation
    actions: tuple[float, float, float]
    next_obs: Observation
    reward: float
    setpoints: tuple[float, float]  # (heating_sp, cooling_sp) active this step
    task_id: int
    policy_action: tuple[float, ...]
    synthetic: bool = False
    terminal: bool = False
    obs_feat: np.ndarray | None = field(default=None, repr=False, compare=False)
    next_obs_feat: np.ndarray | None = field(default=None, repr=False, compare=False)
    model_cache: tuple | None = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class EnvState:
    """Simulator state; the realized weather trace is the opaque RNG state."""

    sim_time_s: float
    zone_temp_c: float
    scenario: str
    step_index: int
    weather_c: np.ndarray = field(repr=False, compare=False)
    seed: int = 0
    params: EnvParams = field(default_factory=EnvParams, repr=False, compare=False)


def outdoor_temp(scenario: str, sim_time_s: float, rng: np.random.Generator | None = None,
                 params: EnvParams = EnvParams()) -> float:
    """Scenario mean + daily sinusoid (+ Gaussian noise when an rng is given)."""
    if scenario not in SCENARIOS:
        raise ContractViolationError(f"unknown scenario {scenario!r}")
    s = SCENARIOS[scenario]
    tod = sim_time_s % SECONDS_PER_DAY
    phase = 2.0 * np.pi * (tod - params.weather_peak_hour * 3600.0) / SECONDS_PER_DAY
    temp = s["mean_c"] + s["amplitude_c"] * np.cos(phase)
    if rng is not None:
        temp += params.weather_noise_sigma_c * rng.standard_normal()
    return float(temp)


def _weather_trace(scenario: str, seed: int, params: EnvParams) -> np.ndarray:
    """Per-episode outdoor temps at steps 0..K+forecast, realized up front."""
    n = params.steps_per_episode + params.forecast_steps + 1
    times = np.arange(n) * params.dt_s
    if params.weather_table is not None:
        return np.array([params.weather_table.temp_at(t) for t in times])
    base = np.array([outdoor_temp(scenario, t, None, params) for t in times])
    noise = np.random.default_rng(seed).standard_normal(n)
    return base + params.weather_noise_sigma_c * noise


def setpoint_schedule(sim_time_s: float, params: EnvParams = EnvParams()) -> tuple[float, float]:
    """(heating_sp, cooling_sp); occupied window start-inclusive, end-exclusive."""
    tod_h = (sim_time_s % SECONDS_PER_DAY) / 3600.0
    if params.occupied_start_h <= tod_h < params.occupied_end_h:
        return params.occupied_band_c
    return params.unoccupied_band_c


def discomfort_reward(zone_temp_c: float, heating_sp_c: float, cooling_sp_c: float,
                      dt_s: float = 900.0) -> float:
    """Negated band violation in Kelvin-hours; 0 inside the band."""
    if not heating_sp_c < cooling_sp_c:
        raise ContractViolationError("heating setpoint must lie below cooling setpoint")
    below = max(0.0, heating_sp_c - zone_temp_c)
    above = max(0.0, zone_temp_c - cooling_sp_c)
    return -(below + above) * (dt_s / 3600.0)


def apply_defaults(task: TaskSpec, policy_actions) -> tuple[float, float, float]:
    """Complete a policy's action vector with the zone's default settings."""
    policy_actions = tuple(float(a) for a in np.atleast_1d(policy_actions))
    if len(policy_actions) != task.action_dim:
        raise ContractViolationError(
            f"task {task.task_id} expects {task.action_dim} actions, got {len(policy_actions)}"
        )
    full = [0.0, 1.0, 1.0]  # slot 0 always policy-controlled; a2/a3 defaults
    for slot, value in zip(task.policy_controlled, policy_actions):
        full[slot] = value
    return tuple(full)


def _observe(state: EnvState) -> Observation:
    angle = 2.0 * np.pi * (state.sim_time_s % SECONDS_PER_DAY) / SECONDS_PER_DAY
    i = state.step_index
    forecast = state.weather_c[i + 1 : i + 1 + state.params.forecast_steps]
    return Observation(
        time_sin=float(np.sin(angle)),
        time_cos=float(np.cos(angle)),
        zone_temp_c=state.zone_temp_c,
        forecast_c=tuple(float(f) for f in forecast),
    )


def env_reset(task: TaskSpec, scenario: str, seed: int,
              params: EnvParams = EnvParams()) -> tuple[EnvState, Observation]:
    if scenario not in SCENARIOS:
        raise ContractViolationError(f"unknown scenario {scenario!r}")
    state = EnvState(
        sim_time_s=0.0,
        zone_temp_c=params.initial_zone_temp_c,
        scenario=scenario,
        step_index=0,
        weather_c=_weather_trace(scenario, seed, params),
        seed=seed,
        params=params,
    )
    return state, _observe(state)


def env_step(state: EnvState, actions) -> tuple[EnvState, Observation, float]:
    """Advance one interval; reward is the discomfort accrued over it.

    The setpoints in force are those scheduled at the interval's start, and
    the violation is measured on the end-of-interval zone temperature.
    """
    p = state.params
    if state.step_index >= p.steps_per_episode:
        raise EpisodeExhaustedError(
            f"episode already ran its {p.steps_per_episode} steps"
        )
    a = np.asarray(actions, dtype=np.float64)
    if a.shape != (3,):
        raise ContractViolationError(f"need a 3-action vector, got shape {a.shape}")
    if np.any(a < -1e-9) or np.any(a > 1.0 + 1e-9):
        raise ContractViolationError(f"actions must lie in [0, 1], got {a}")
    a = np.clip(a, 0.0, 1.0)

    t_out = float(state.weather_c[state.step_index])
    heat_w = p.heat_pump_max_w * a[0] * (0.5 + 0.5 * a[1]) * a[2]
    t_new = state.zone_temp_c + (p.dt_s / p.capacitance_j_per_k) * (
        p.ua_w_per_k * (t_out - state.zone_temp_c) + heat_w
    )
    t_new = float(np.clip(t_new, *TEMP_CLAMP_C))

    heating_sp, cooling_sp = setpoint_schedule(state.sim_time_s, p)
    reward = discomfort_reward(t_new, heating_sp, cooling_sp, p.dt_s)

    new_state = replace(
        state,
        sim_time_s=state.sim_time_s + p.dt_s,
        zone_temp_c=t_new,
        step_index=state.step_index + 1,
    )
    return new_state, _observe(new_state), reward
