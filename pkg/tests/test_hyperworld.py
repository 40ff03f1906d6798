"""World-model tests: conditioning, generation, prediction, the full training
gradient against finite differences, snapshot anchoring, and rollouts."""

import copy

import numpy as np
import pytest

from hyperdyna.diffnet import finite_difference, param_count
from hyperdyna.envsim import TaskSpec, Transition, apply_defaults, env_reset, env_step, setpoint_schedule
from hyperdyna.errors import ContractViolationError
from hyperdyna.hyperworld import (GeneratedTarget, NormProfile, RegularizationSnapshot,
                                  TargetSpec, _loss_and_grad, capture_snapshot,
                                  encode_condition, ensemble_predict, generate_target,
                                  hypernet_init, hypernet_train_step, model_error,
                                  synthetic_rollout, synthetic_rollouts, target_predict)
from hyperdyna.sac import ActionGrid


def tiny_hypernet(seed=0, noise_dim=2, noise_sigma=0.1):
    return hypernet_init(TargetSpec.default(hidden=(4,)), seed=seed, hidden=(6,),
                         noise_dim=noise_dim, noise_sigma=noise_sigma)


def rollout_transitions(task_id=1, n=48, seed=0, scenario="january_like"):
    """Fabricate real transitions by driving the simulator with random actions."""
    task = TaskSpec.for_task(task_id)
    rng = np.random.default_rng(seed)
    state, obs = env_reset(task, scenario, seed)
    out = []
    for _ in range(n):
        policy = rng.uniform(0, 1, size=task.action_dim)
        full = apply_defaults(task, policy)
        setpoints = setpoint_schedule(state.sim_time_s)
        state, next_obs, reward = env_step(state, full)
        out.append(Transition(obs, full, next_obs, reward, setpoints, task_id,
                              tuple(policy)))
        obs = next_obs
    return out


class TestEncodeCondition:
    def test_task_one_hot_prefix(self):
        cond = encode_condition(1, 0, np.zeros(2), num_layer_ids=6)
        assert list(cond[:3]) == [1.0, 0.0, 0.0]

    def test_zero_noise_deterministic(self):
        a = encode_condition(2, 3, np.zeros(4), 6)
        b = encode_condition(2, 3, np.zeros(4), 6)
        assert np.array_equal(a, b)

    def test_zero_noise_dim_degenerates_to_one_hots(self):
        cond = encode_condition(3, 1, np.zeros(0), 4)
        assert cond.shape == (7,)
        assert cond.sum() == 2.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ContractViolationError):
            encode_condition(4, 0, np.zeros(2), 6)
        with pytest.raises(ContractViolationError):
            encode_condition(1, 6, np.zeros(2), 6)


class TestGeneration:
    def test_layer_id_space_spans_both_targets(self):
        h = tiny_hypernet()
        assert h.num_layer_ids == 4  # two targets x (7->4, 4->1)
        assert h.head_size == max(7 * 4 + 4, 4 * 1 + 1)

    def test_assembled_length_matches_spec(self):
        h = tiny_hypernet()
        gen = generate_target(h, "dynamics", 1, np.zeros(2))
        assert gen.params.shape == (param_count(h.targets.dynamics),)

    def test_purity(self):
        h = tiny_hypernet()
        noise = np.array([0.3, -0.7])
        a = generate_target(h, "reward", 2, noise)
        b = generate_target(h, "reward", 2, noise)
        assert np.array_equal(a.params, b.params)

    def test_noise_draws_differ_after_training(self):
        h = tiny_hypernet()
        rng = np.random.default_rng(0)
        batch = rollout_transitions(n=16)
        for _ in range(20):
            hypernet_train_step(h, batch, 1, RegularizationSnapshot.empty(),
                                lr=1e-3, rng=rng)
        a = generate_target(h, "dynamics", 1, np.array([0.5, 0.5]))
        b = generate_target(h, "dynamics", 1, np.array([-0.5, -0.5]))
        assert np.linalg.norm(a.params - b.params) > 0.0

    def test_task_conditioning_changes_output(self):
        h = tiny_hypernet()
        a = generate_target(h, "dynamics", 1, np.zeros(2))
        b = generate_target(h, "dynamics", 2, np.zeros(2))
        assert not np.array_equal(a.params, b.params)

    def test_generated_params_read_only(self):
        h = tiny_hypernet()
        gen = generate_target(h, "dynamics", 1, np.zeros(2))
        with pytest.raises(ValueError):
            gen.params[0] = 5.0

    def test_wrong_noise_length_rejected(self):
        h = tiny_hypernet()
        with pytest.raises(ContractViolationError):
            generate_target(h, "dynamics", 1, np.zeros(5))


class TestTargetPredict:
    def test_zero_params_predict_normalization_center(self):
        h = tiny_hypernet()
        spec = h.targets.dynamics
        zero = GeneratedTarget("dynamics", 1, (0.0, 0.0), spec,
                               np.zeros(param_count(spec)))
        x = np.array([20.0, -2.0, 24.0, 21.0, 0.5, 1.0, 1.0])
        # normalized output 0 denormalizes to the 20 C center
        assert target_predict(zero, h.norm, x) == pytest.approx(20.0)
        zero_r = GeneratedTarget("reward", 1, (0.0, 0.0), h.targets.reward,
                                 np.zeros(param_count(spec)))
        assert target_predict(zero_r, h.norm, x) == pytest.approx(0.0)

    def test_identical_inputs_identical_outputs(self):
        h = tiny_hypernet()
        gen = generate_target(h, "dynamics", 1, np.array([0.1, 0.2]))
        x = np.array([19.0, 3.0, 24.0, 21.0, 1.0, 1.0, 1.0])
        assert target_predict(gen, h.norm, x) == target_predict(gen, h.norm, x)


class TestEnsemblePredict:
    def test_single_model_zero_std(self):
        h = tiny_hypernet()
        x = np.array([20.0, -2.0, 24.0, 21.0, 0.5, 1.0, 1.0])
        _, std = ensemble_predict(h, "dynamics", 1, x, n_models=1,
                                  rng=np.random.default_rng(0))
        assert std == 0.0

    def test_zero_sigma_zero_std(self):
        h = tiny_hypernet(noise_sigma=0.0)
        x = np.array([20.0, -2.0, 24.0, 21.0, 0.5, 1.0, 1.0])
        mean, std = ensemble_predict(h, "dynamics", 1, x, n_models=25,
                                     rng=np.random.default_rng(0))
        assert std == 0.0
        gen = generate_target(h, "dynamics", 1, np.zeros(2))
        assert mean == pytest.approx(target_predict(gen, h.norm, x))

    def test_reproducible_for_fixed_rng(self):
        h = tiny_hypernet()
        x = np.array([20.0, -2.0, 24.0, 21.0, 0.5, 1.0, 1.0])
        a = ensemble_predict(h, "dynamics", 2, x, 10, np.random.default_rng(3))
        b = ensemble_predict(h, "dynamics", 2, x, 10, np.random.default_rng(3))
        assert a == b

    def test_mean_converges_to_zero_noise_prediction(self):
        x = np.array([21.0, 5.0, 24.0, 21.0, 0.3, 1.0, 1.0])
        h_ref = tiny_hypernet(seed=7, noise_sigma=0.0)
        gen = generate_target(h_ref, "dynamics", 1, np.zeros(2))
        reference = target_predict(gen, h_ref.norm, x)
        gaps = []
        for sigma in (0.1, 0.01, 0.001):
            h = tiny_hypernet(seed=7, noise_sigma=sigma)
            mean, _ = ensemble_predict(h, "dynamics", 1, x, 64, np.random.default_rng(11))
            gaps.append(abs(mean - reference))
        assert gaps[2] < gaps[0]
        assert gaps[2] < 1e-3


class TestTrainStep:
    def test_task1_regularization_exactly_zero(self):
        h = tiny_hypernet()
        losses = hypernet_train_step(h, rollout_transitions(n=8), 1,
                                     RegularizationSnapshot.empty(),
                                     rng=np.random.default_rng(0))
        assert losses.regularization == 0.0

    def test_beta_zero_total_is_pure_mse(self):
        h = tiny_hypernet()
        snap = capture_snapshot(h, [1])
        # perturb so the snapshot distance is nonzero, then train with beta=0
        h.params = h.params + 0.01
        losses = hypernet_train_step(h, rollout_transitions(task_id=2, n=8), 2,
                                     snap, beta=0.0, rng=np.random.default_rng(0))
        assert losses.total == pytest.approx(losses.mse_dynamics + losses.mse_reward)

    def test_gradient_matches_finite_differences(self):
        """Whole-pipeline gradient: through assembled targets, mixed task tags,
        and the snapshot regularizer, against central differences."""
        h = tiny_hypernet(seed=3)
        snap = capture_snapshot(h, [1])
        h.params = h.params + 0.02  # make the anchor term active
        batch = rollout_transitions(task_id=1, n=3) + rollout_transitions(task_id=2, n=4)
        noise = np.array([0.21, -0.13])
        losses, grad = _loss_and_grad(h, batch, snap, 0.1, noise)
        assert losses.regularization > 0.0

        def total_at(p):
            saved = h.params
            h.params = p
            value = _loss_and_grad(h, batch, snap, 0.1, noise)[0].total
            h.params = saved
            return value

        fd = finite_difference(total_at, h.params)
        denom = np.maximum(np.maximum(np.abs(grad), np.abs(fd)), 1e-3)
        assert np.max(np.abs(grad - fd) / denom) < 1e-4

    def test_overfit_small_batch(self):
        """2000 steps on one small batch cut the dynamics MSE below 10%."""
        h = hypernet_init(TargetSpec.default(hidden=(16,)), seed=1, hidden=(32,),
                          noise_dim=2, noise_sigma=0.05)
        batch = rollout_transitions(n=32, seed=5)
        rng = np.random.default_rng(0)
        first = hypernet_train_step(h, batch, 1, RegularizationSnapshot.empty(), rng=rng)
        last = first
        for _ in range(1999):
            last = hypernet_train_step(h, batch, 1, RegularizationSnapshot.empty(), rng=rng)
        assert last.mse_dynamics < 0.1 * first.mse_dynamics

    def test_held_out_error_improves(self):
        h = tiny_hypernet(seed=2)
        train = rollout_transitions(n=64, seed=1)
        held_out = rollout_transitions(n=32, seed=99)
        initial = model_error(h, held_out)
        rng = np.random.default_rng(0)
        for _ in range(300):
            hypernet_train_step(h, train, 1, RegularizationSnapshot.empty(),
                                lr=1e-3, rng=rng)
        assert model_error(h, held_out) < initial


class TestSnapshot:
    def test_snapshot_contents_by_stage(self):
        h = tiny_hypernet()
        snap1 = capture_snapshot(h, [1])
        assert snap1.task_ids == (1,)
        snap2 = capture_snapshot(h, [1, 2])
        assert snap2.task_ids == (1, 2)
        for kind in ("dynamics", "reward"):
            assert snap1.params(1, kind).shape == (param_count(h.targets.spec_for(kind)),)

    def test_snapshot_immutable_under_training(self):
        h = tiny_hypernet()
        snap = capture_snapshot(h, [1])
        frozen = {kind: snap.params(1, kind).copy() for kind in ("dynamics", "reward")}
        rng = np.random.default_rng(0)
        for _ in range(50):
            hypernet_train_step(h, rollout_transitions(n=8), 2, snap, lr=1e-3, rng=rng)
        for kind in ("dynamics", "reward"):
            assert np.array_equal(snap.params(1, kind), frozen[kind])
        with pytest.raises(ValueError):
            snap.params(1, "dynamics")[0] = 1.0

    def test_anchoring_reduces_drift(self):
        """Training task 2 with the regularizer keeps task-1 zero-noise params
        closer to their snapshot than the identical run without it."""
        h = tiny_hypernet(seed=4)
        task1_data = rollout_transitions(task_id=1, n=64, seed=3)
        rng = np.random.default_rng(1)
        for _ in range(200):
            hypernet_train_step(h, task1_data, 1, RegularizationSnapshot.empty(),
                                lr=1e-3, rng=rng)
        snap = capture_snapshot(h, [1])
        task2_data = rollout_transitions(task_id=2, n=64, seed=8)

        def drift(h_end):
            total = 0.0
            for kind in ("dynamics", "reward"):
                current = generate_target(h_end, kind, 1, np.zeros(2)).params
                diff = current - snap.params(1, kind)
                total += float(np.mean(diff * diff))
            return total

        results = {}
        for beta in (0.1, 0.0):
            h_run = copy.deepcopy(h)
            rng_run = np.random.default_rng(42)
            for _ in range(300):
                hypernet_train_step(h_run, task2_data, 2, snap, beta=beta,
                                    lr=1e-3, rng=rng_run)
            results[beta] = drift(h_run)
        assert results[0.1] < results[0.0]


class TestGradientRouting:
    def test_prediction_never_mutates_hypernet(self):
        h = tiny_hypernet()
        before = h.params.copy()
        gen = generate_target(h, "dynamics", 1, np.zeros(2))
        mutated = gen.params.copy()
        mutated[:] = 99.0
        x = np.array([20.0, -2.0, 24.0, 21.0, 0.5, 1.0, 1.0])
        target_predict(GeneratedTarget("dynamics", 1, (0.0, 0.0), gen.spec, mutated),
                       h.norm, x)
        assert np.array_equal(h.params, before)

    def test_only_train_step_mutates_params(self):
        h = tiny_hypernet()
        before = h.params.copy()
        ensemble_predict(h, "reward", 1, np.array([20.0, 0.0, 24.0, 21.0, 1, 1, 1]),
                         5, np.random.default_rng(0))
        capture_snapshot(h, [1, 2])
        assert np.array_equal(h.params, before)
        hypernet_train_step(h, rollout_transitions(n=4), 1,
                            RegularizationSnapshot.empty(), rng=np.random.default_rng(0))
        assert not np.array_equal(h.params, before)


class TestSyntheticRollouts:
    def _policy(self, dim):
        def sample(obs_list):
            return np.full((len(obs_list), dim), 0.37)
        return sample

    def test_rollout_fields_and_flags(self):
        h = tiny_hypernet()
        samples = rollout_transitions(n=10)
        out = synthetic_rollouts(h, TaskSpec.for_task(1), samples, self._policy(1),
                                 np.random.default_rng(0), n_models=5)
        assert len(out) == 10
        for synth, real in zip(out, samples):
            assert synth.synthetic
            assert synth.obs == real.obs
            assert synth.setpoints == real.setpoints
            assert synth.reward <= 0.0
            assert synth.actions[1:] == (1.0, 1.0)  # defaults for task 1
            assert synth.actions[0] == 0.25  # 0.37 snapped to the default grid
            assert synth.policy_action == (0.37,)
            assert -20.0 <= synth.next_obs.zone_temp_c <= 60.0

    def test_extreme_predictions_clamped(self):
        h = tiny_hypernet(noise_sigma=0.0)
        h.params = h.params * 0.0 + 5.0  # saturate generated nets high
        samples = rollout_transitions(n=4)
        out = synthetic_rollouts(h, TaskSpec.for_task(1), samples, self._policy(1),
                                 np.random.default_rng(0), n_models=3)
        for synth in out:
            assert synth.next_obs.zone_temp_c <= 60.0
            assert synth.reward <= 0.0

    def test_single_rollout_matches_batched(self):
        h = tiny_hypernet()
        sample = rollout_transitions(n=1)[0]
        a = synthetic_rollout(h, TaskSpec.for_task(1), sample, self._policy(1),
                              np.random.default_rng(5), n_models=4)
        b = synthetic_rollouts(h, TaskSpec.for_task(1), [sample], self._policy(1),
                               np.random.default_rng(5), n_models=4)[0]
        assert a == b

    def test_task2_uses_policy_for_all_slots(self):
        h = tiny_hypernet()
        samples = rollout_transitions(task_id=2, n=3)
        out = synthetic_rollouts(h, TaskSpec.for_task(2), samples, self._policy(3),
                                 np.random.default_rng(0), n_models=2)
        for synth in out:
            assert synth.actions == (0.25, 0.25, 0.25)
            assert len(synth.policy_action) == 3
