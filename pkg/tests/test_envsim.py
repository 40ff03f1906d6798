"""Environment tests: reset/step contracts, hand-evaluated RC dynamics,
schedules, reward shape, and determinism."""

import numpy as np
import pytest

from hyperdyna.envsim import (EnvParams, TaskSpec, WeatherTable, apply_defaults,
                              discomfort_reward, env_reset, env_step,
                              load_weather_table, outdoor_temp, setpoint_schedule)
from hyperdyna.errors import ContractViolationError, EpisodeExhaustedError

HOUR = 3600.0


class TestTaskSpec:
    def test_tasks_1_and_3_control_single_action(self):
        for tid in (1, 3):
            task = TaskSpec.for_task(tid)
            assert task.policy_controlled == (0,)
            assert task.action_dim == 1

    def test_task_2_controls_all_actions(self):
        task = TaskSpec.for_task(2)
        assert task.policy_controlled == (0, 1, 2)

    def test_one_hot(self):
        assert TaskSpec.for_task(1).one_hot == (1.0, 0.0, 0.0)
        assert TaskSpec.for_task(3).one_hot == (0.0, 0.0, 1.0)

    def test_wrong_action_set_rejected(self):
        with pytest.raises(ContractViolationError):
            TaskSpec(1, (0, 1, 2))


class TestOutdoorTemp:
    def test_january_mean_at_sinusoid_zero_crossing(self):
        # cosine peaked at 15:00 crosses zero at 09:00 and 21:00
        assert outdoor_temp("january_like", 9 * HOUR) == pytest.approx(-2.0)
        assert outdoor_temp("january_like", 21 * HOUR) == pytest.approx(-2.0)

    def test_april_peak(self):
        assert outdoor_temp("april_like", 15 * HOUR) == pytest.approx(16.0)

    def test_seeded_noise_reproducible(self):
        a = outdoor_temp("january_like", 0.0, np.random.default_rng(5))
        b = outdoor_temp("january_like", 0.0, np.random.default_rng(5))
        assert a == b

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ContractViolationError):
            outdoor_temp("july_like", 0.0)


class TestSetpointSchedule:
    def test_noon_occupied(self):
        assert setpoint_schedule(12 * HOUR) == (21.0, 24.0)

    def test_night_unoccupied(self):
        assert setpoint_schedule(3 * HOUR) == (15.0, 30.0)

    def test_boundaries(self):
        assert setpoint_schedule(7 * HOUR) == (21.0, 24.0)  # start inclusive
        assert setpoint_schedule(22 * HOUR) == (15.0, 30.0)  # end exclusive
        assert setpoint_schedule(22 * HOUR - 1.0) == (21.0, 24.0)


class TestDiscomfortReward:
    def test_inside_band_zero(self):
        assert discomfort_reward(22.0, 21.0, 24.0) == 0.0

    def test_below_band(self):
        assert discomfort_reward(19.0, 21.0, 24.0) == pytest.approx(-0.5)

    def test_above_band(self):
        assert discomfort_reward(25.0, 21.0, 24.0) == pytest.approx(-0.25)

    def test_inverted_band_rejected(self):
        with pytest.raises(ContractViolationError):
            discomfort_reward(20.0, 24.0, 21.0)

    def test_never_positive(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            t = rng.uniform(-30, 70)
            assert discomfort_reward(t, 21.0, 24.0) <= 0.0


class TestApplyDefaults:
    def test_task1_fills_defaults(self):
        assert apply_defaults(TaskSpec.for_task(1), [0.7]) == (0.7, 1.0, 1.0)

    def test_task2_passthrough(self):
        assert apply_defaults(TaskSpec.for_task(2), [0.7, 0.2, 0.9]) == (0.7, 0.2, 0.9)

    def test_task3_fills_defaults(self):
        assert apply_defaults(TaskSpec.for_task(3), [0.0]) == (0.0, 1.0, 1.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ContractViolationError):
            apply_defaults(TaskSpec.for_task(1), [0.5, 0.5])


def constant_weather(temp_c: float) -> EnvParams:
    return EnvParams(weather_table=WeatherTable((0.0, 1e9), (temp_c, temp_c)))


class TestEnvReset:
    def test_reset_contract(self):
        state, obs = env_reset(TaskSpec.for_task(1), "january_like", seed=3)
        assert state.zone_temp_c == 20.0
        assert state.step_index == 0
        assert state.sim_time_s == 0.0
        assert obs.zone_temp_c == 20.0
        assert obs.time_sin == pytest.approx(0.0)
        assert obs.time_cos == pytest.approx(1.0)

    def test_reset_deterministic(self):
        s1, o1 = env_reset(TaskSpec.for_task(1), "january_like", seed=3)
        s2, o2 = env_reset(TaskSpec.for_task(1), "january_like", seed=3)
        assert s1 == s2
        assert np.array_equal(s1.weather_c, s2.weather_c)
        assert o1 == o2

    def test_forecast_is_next_four_weather_steps(self):
        state, obs = env_reset(TaskSpec.for_task(1), "april_like", seed=9)
        assert obs.forecast_c == tuple(float(f) for f in state.weather_c[1:5])

    def test_time_features_on_unit_circle(self):
        state, obs = env_reset(TaskSpec.for_task(1), "january_like", seed=0)
        for _ in range(50):
            state, obs, _ = env_step(state, (0.5, 1.0, 1.0))
            assert obs.time_sin**2 + obs.time_cos**2 == pytest.approx(1.0, abs=1e-9)


class TestEnvStep:
    def test_no_flux_fixed_point(self):
        params = constant_weather(20.0)
        state, _ = env_reset(TaskSpec.for_task(1), "january_like", 0, params)
        new_state, _, _ = env_step(state, (0.0, 1.0, 1.0))
        assert new_state.zone_temp_c == pytest.approx(20.0)

    def test_cooling_step_hand_evaluated(self):
        # T=20, T_out=-2, no heat: T' = 20 + (900/12e6) * 240 * (-22) = 19.604
        params = constant_weather(-2.0)
        state, _ = env_reset(TaskSpec.for_task(1), "january_like", 0, params)
        new_state, _, _ = env_step(state, (0.0, 1.0, 1.0))
        assert new_state.zone_temp_c == pytest.approx(19.604)

    def test_full_heat_step_hand_evaluated(self):
        # add (900/12e6) * 9000 = 0.675 on top of the cooling step
        params = constant_weather(-2.0)
        state, _ = env_reset(TaskSpec.for_task(1), "january_like", 0, params)
        new_state, _, _ = env_step(state, (1.0, 1.0, 1.0))
        assert new_state.zone_temp_c == pytest.approx(20.279)

    def test_step_counters_advance(self):
        state, _ = env_reset(TaskSpec.for_task(1), "january_like", 1)
        new_state, _, _ = env_step(state, (0.2, 1.0, 1.0))
        assert new_state.step_index == 1
        assert new_state.sim_time_s == 900.0

    def test_bad_actions_rejected(self):
        state, _ = env_reset(TaskSpec.for_task(1), "january_like", 1)
        with pytest.raises(ContractViolationError):
            env_step(state, (1.5, 1.0, 1.0))
        with pytest.raises(ContractViolationError):
            env_step(state, (0.5, 1.0))

    def test_episode_exhaustion(self):
        params = EnvParams(steps_per_episode=3)
        state, _ = env_reset(TaskSpec.for_task(1), "january_like", 1, params)
        for _ in range(3):
            state, _, _ = env_step(state, (0.5, 1.0, 1.0))
        with pytest.raises(EpisodeExhaustedError):
            env_step(state, (0.5, 1.0, 1.0))

    def test_heat_pump_monotonicity(self):
        """With all else fixed, more heat-pump signal never cools the zone."""
        rng = np.random.default_rng(21)
        state, _ = env_reset(TaskSpec.for_task(1), "january_like", 4)
        for _ in range(100):
            a1_low, a1_high = sorted(rng.uniform(0, 1, size=2))
            a2, a3 = rng.uniform(0, 1, size=2)
            t_low, _, _ = env_step(state, (a1_low, a2, a3))
            t_high, _, _ = env_step(state, (a1_high, a2, a3))
            assert t_high.zone_temp_c >= t_low.zone_temp_c
            state, _, _ = env_step(state, (rng.uniform(), a2, a3))

    def test_equilibrium_convergence(self):
        """Heat off and constant weather: the zone relaxes monotonically to T_out."""
        params = constant_weather(5.0)
        state, _ = env_reset(TaskSpec.for_task(1), "january_like", 0, params)
        gap = abs(state.zone_temp_c - 5.0)
        for _ in range(400):
            state, _, _ = env_step(state, (0.0, 1.0, 1.0))
            new_gap = abs(state.zone_temp_c - 5.0)
            assert new_gap <= gap
            gap = new_gap
        assert gap < 0.02

    def test_reward_sign_matches_band(self):
        state, obs = env_reset(TaskSpec.for_task(1), "january_like", 8)
        for _ in range(200):
            heating_sp, cooling_sp = setpoint_schedule(state.sim_time_s)
            state, obs, reward = env_step(state, (0.3, 1.0, 1.0))
            if heating_sp <= obs.zone_temp_c <= cooling_sp:
                assert reward == 0.0
            else:
                assert reward < 0.0

    def test_full_episode_determinism(self):
        params = EnvParams(steps_per_episode=50)
        rng = np.random.default_rng(13)
        actions = rng.uniform(0, 1, size=(50, 3))
        streams = []
        for _ in range(2):
            state, obs = env_reset(TaskSpec.for_task(2), "april_like", 77, params)
            trace = []
            for a in actions:
                state, obs, reward = env_step(state, a)
                trace.append((state.zone_temp_c, reward, obs.forecast_c))
            streams.append(trace)
        assert streams[0] == streams[1]


class TestWeatherTable:
    def test_load_and_interpolate(self, tmp_path):
        path = tmp_path / "weather.csv"
        path.write_text("time_s,temp_c\n0,0.0\n1800,2.0\n")
        table = load_weather_table(path)
        assert table.temp_at(900.0) == pytest.approx(1.0)

    def test_table_overrides_generator(self, tmp_path):
        path = tmp_path / "weather.csv"
        path.write_text("0,7.5\n100000,7.5\n")
        params = EnvParams(weather_table=load_weather_table(path))
        state, obs = env_reset(TaskSpec.for_task(1), "january_like", 0, params)
        assert np.all(state.weather_c == 7.5)
        assert obs.forecast_c == (7.5, 7.5, 7.5, 7.5)

    def test_malformed_table_rejected(self, tmp_path):
        path = tmp_path / "weather.csv"
        path.write_text("0,1.0,extra\n")
        with pytest.raises(ContractViolationError):
            load_weather_table(path)

    def test_empty_table_rejected(self, tmp_path):
        path = tmp_path / "weather.csv"
        path.write_text("time_s,temp_c\n")
        with pytest.raises(ContractViolationError):
            load_weather_table(path)
