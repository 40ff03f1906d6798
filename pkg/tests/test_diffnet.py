"""Unit tests for the MLP substrate: shapes, hand-derived gradients,
finite-difference agreement, and Adam behavior."""

import numpy as np
import pytest

from hyperdyna.diffnet import (AdamState, NetSpec, adam_step, finite_difference,
                               forward_cached, backward, init_params, layer_views,
                               mlp_forward, mlp_gradient, mlp_init, param_count)
from hyperdyna.errors import ContractViolationError


def rel_error(analytic, numeric, floor=1e-3):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.max(np.abs(analytic - numeric) / denom)


class TestNetSpec:
    def test_identity_scalar_net_has_two_params(self):
        spec = NetSpec((1, 1), ("identity",))
        assert param_count(spec) == 2

    def test_param_count_4_8_2(self):
        spec = NetSpec.mlp(4, (8,), 2)
        assert param_count(spec) == 4 * 8 + 8 + 8 * 2 + 2 == 58

    @pytest.mark.parametrize("sizes,acts", [
        ((5,), ("tanh",)),
        ((2, 0), ("tanh",)),
        ((2, 3), ("tanh", "relu")),
        ((2, 3), ("softmax",)),
    ])
    def test_invalid_specs_rejected(self, sizes, acts):
        with pytest.raises(ContractViolationError):
            NetSpec(sizes, acts)


class TestInit:
    def test_biases_zero_and_weights_bounded(self):
        spec = NetSpec.mlp(4, (8,), 2)
        params = mlp_init(spec, 7)
        assert params.shape == (58,)
        for (w, b), (out_dim, in_dim) in zip(layer_views(spec, params), spec.layer_shapes()):
            bound = np.sqrt(1.0 / in_dim)
            assert np.all(np.abs(w) <= bound)
            assert np.all(b == 0.0)

    def test_same_seed_bit_identical(self):
        spec = NetSpec.mlp(4, (8,), 2)
        a = mlp_init(spec, 7)
        b = mlp_init(spec, 7)
        assert a.tobytes() == b.tobytes()
        assert mlp_init(spec, 8).tobytes() != a.tobytes()


class TestForward:
    def test_identity_passthrough(self):
        spec = NetSpec((1, 1), ("identity",))
        params = np.array([1.0, 0.0])
        assert mlp_forward(spec, params, [3.5]) == pytest.approx([3.5])

    def test_affine_by_hand(self):
        spec = NetSpec((1, 1), ("identity",))
        params = np.array([2.0, 1.0])
        assert mlp_forward(spec, params, [3.0]) == pytest.approx([7.0])

    def test_zero_params_give_zero_output(self):
        spec = NetSpec.mlp(2, (2,), 1)
        params = np.zeros(param_count(spec))
        assert mlp_forward(spec, params, [0.3, -1.2]) == pytest.approx([0.0])

    def test_dimension_mismatch_rejected(self):
        spec = NetSpec.mlp(2, (2,), 1)
        params = np.zeros(param_count(spec))
        with pytest.raises(ContractViolationError):
            mlp_forward(spec, params, [1.0, 2.0, 3.0])

    def test_purity_bit_identical(self):
        spec = NetSpec.mlp(3, (5, 4), 2)
        params = mlp_init(spec, 0)
        x = np.random.default_rng(1).normal(size=(6, 3))
        y1 = mlp_forward(spec, params, x)
        y2 = mlp_forward(spec, params, x)
        assert y1.tobytes() == y2.tobytes()


class TestGradient:
    def test_hand_differentiated_scalar_case(self):
        # L = (w*x + b - t)^2 with w=1, b=0, x=1, t=0: L=1, dL/dw=2, dL/db=2
        spec = NetSpec((1, 1), ("identity",))
        loss, grads = mlp_gradient(spec, np.array([1.0, 0.0]), [[1.0]], [[0.0]])
        assert loss == pytest.approx(1.0)
        assert grads == pytest.approx([2.0, 2.0])

    def test_exact_fit_means_zero_loss_zero_grads(self):
        spec = NetSpec.mlp(2, (3,), 1)
        params = mlp_init(spec, 3)
        x = np.random.default_rng(4).normal(size=(5, 2))
        targets = mlp_forward(spec, params, x)
        loss, grads = mlp_gradient(spec, params, x, targets)
        assert loss == 0.0
        assert np.all(grads == 0.0)

    def test_matches_finite_differences_2_3_1(self):
        spec = NetSpec.mlp(2, (3,), 1)
        rng = np.random.default_rng(11)
        params = init_params(spec, rng)
        x = rng.normal(size=(4, 2))
        t = rng.normal(size=(4, 1))
        _, grads = mlp_gradient(spec, params, x, t)
        fd = finite_difference(lambda p: mlp_gradient(spec, p, x, t)[0], params)
        assert rel_error(grads, fd) < 1e-4

    @pytest.mark.parametrize("hidden,acts", [
        ((8, 8), "tanh"),
        ((6,), "relu"),
        ((5, 4), "tanh"),
    ])
    def test_gradient_exactness_property(self, hidden, acts):
        """Full-coordinate FD agreement over repeated random draws."""
        spec = NetSpec.mlp(3, hidden, 2, hidden_activation=acts)
        rng = np.random.default_rng(hash((hidden, acts)) % 2**32)
        for _ in range(10):
            params = init_params(spec, rng)
            x = rng.normal(size=(3, 3))
            t = rng.normal(size=(3, 2))
            _, grads = mlp_gradient(spec, params, x, t)
            fd = finite_difference(lambda p: mlp_gradient(spec, p, x, t)[0], params)
            assert rel_error(grads, fd) < 1e-4

    def test_backward_input_gradient(self):
        spec = NetSpec.mlp(3, (4,), 2)
        rng = np.random.default_rng(9)
        params = init_params(spec, rng)
        x = rng.normal(size=(1, 3))
        g_out = rng.normal(size=(1, 2))
        _, cache = forward_cached(spec, params, x)
        _, g_in = backward(spec, params, cache, g_out)
        # finite differences over the input
        fd = np.zeros(3)
        for i in range(3):
            up, down = x.copy(), x.copy()
            up[0, i] += 1e-5
            down[0, i] -= 1e-5
            fd[i] = (np.sum(mlp_forward(spec, params, up) * g_out)
                     - np.sum(mlp_forward(spec, params, down) * g_out)) / 2e-5
        assert rel_error(g_in[0], fd) < 1e-4

    def test_shape_mismatch_rejected(self):
        spec = NetSpec.mlp(2, (3,), 1)
        params = mlp_init(spec, 0)
        with pytest.raises(ContractViolationError):
            mlp_gradient(spec, params, [[1.0, 2.0]], [[1.0, 2.0]])
        with pytest.raises(ContractViolationError):
            mlp_gradient(spec, params, np.zeros((0, 2)), np.zeros((0, 1)))


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        params = np.array([0.5, -0.25])
        state = AdamState.for_params(2)
        new_params, new_state = adam_step(params, np.zeros(2), state, lr=0.1)
        assert np.all(new_params == params)
        assert new_state.step_count == 1

    def test_first_step_moves_by_lr(self):
        # bias-corrected first step: m_hat = g, v_hat = g^2, delta = lr*g/(|g|+eps)
        params = np.array([0.0])
        state = AdamState.for_params(1)
        new_params, _ = adam_step(params, np.array([1.0]), state, lr=0.1)
        assert new_params[0] == pytest.approx(-0.1, abs=1e-7)

    def test_sequential_calls_deterministic(self):
        params = np.array([0.3, 0.7])
        grads = np.array([0.1, -0.2])
        state = AdamState.for_params(2)
        p1, s1 = adam_step(params, grads, state, lr=0.01)
        p2, s2 = adam_step(p1, grads, s1, lr=0.01)
        assert s2.step_count == 2
        p1b, s1b = adam_step(params, grads, AdamState.for_params(2), lr=0.01)
        assert p1b.tobytes() == p1.tobytes()
        assert s1b.step_count == s1.step_count

    def test_lr_zero_is_identity_on_params(self):
        rng = np.random.default_rng(2)
        params = rng.normal(size=17)
        grads = rng.normal(size=17)
        new_params, state = adam_step(params, grads, AdamState.for_params(17), lr=0.0)
        assert np.all(new_params == params)
        assert state.step_count == 1
