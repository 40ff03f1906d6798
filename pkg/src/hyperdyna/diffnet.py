"""Dense MLP substrate: flat parameter vectors, exact reverse-mode gradients,
and a bias-corrected Adam optimizer.

All parameters of a network live in one flat float64 vector ("ParamVector").
Layout, per layer in order: the weight matrix of shape (out_dim, in_dim) in
row-major order, then the bias of length out_dim.  A network with layer sizes
[n0, n1, ..., nL] therefore has sum(n_{i} * n_{i+1} + n_{i+1}) parameters.

Initialization draws weights uniformly from +-sqrt(1/fan_in) (biases are zero),
layer by layer in order, from a PCG64 generator seeded by the caller; calls
with the same spec and seed are bit-identical.

forward/backward/adam_step are pure functions: they never mutate their inputs
and return fresh arrays, so identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError

ACTIVATIONS = ("tanh", "relu", "identity")


@dataclass(frozen=True)
class NetSpec:
    """Architecture of a dense MLP: layer sizes plus one activation per boundary."""

    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        acts = tuple(str(a) for a in self.activations)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)
        if len(sizes) < 2:
            raise ContractViolationError("NetSpec needs at least input and output sizes")
        if any(s < 1 for s in sizes):
            raise ContractViolationError(f"layer sizes must be >= 1, got {sizes}")
        if len(acts) != len(sizes) - 1:
            raise ContractViolationError(
                f"need {len(sizes) - 1} activations for {len(sizes)} layers, got {len(acts)}"
            )
        for a in acts:
            if a not in ACTIVATIONS:
                raise ContractViolationError(f"unknown activation {a!r}")

    @staticmethod
    def mlp(in_dim: int, hidden: tuple[int, ...], out_dim: int,
            hidden_activation: str = "tanh", output_activation: str = "identity") -> "NetSpec":
        sizes = (in_dim, *hidden, out_dim)
        acts = (hidden_activation,) * len(hidden) + (output_activation,)
        return NetSpec(sizes, acts)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(out_dim, in_dim) per layer."""
        s = self.layer_sizes
        return [(s[i + 1], s[i]) for i in range(self.num_layers)]

    def layer_param_counts(self) -> list[int]:
        return [o * i + o for (o, i) in self.layer_shapes()]

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "activations": list(self.activations)}

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(tuple(d["layer_sizes"]), tuple(d["activations"]))


def param_count(spec: NetSpec) -> int:
    return sum(spec.layer_param_counts())


def layer_views(spec: NetSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Reshape a flat ParamVector into per-layer (W, b) views (no copies)."""
    if params.shape != (param_count(spec),):
        raise ContractViolationError(
            f"param vector has length {params.shape}, spec needs {param_count(spec)}"
        )
    views = []
    offset = 0
    for out_dim, in_dim in spec.layer_shapes():
        w = params[offset : offset + out_dim * in_dim].reshape(out_dim, in_dim)
        offset += out_dim * in_dim
        b = params[offset : offset + out_dim]
        offset += out_dim
        views.append((w, b))
    return views


def init_params(spec: NetSpec, rng: np.random.Generator) -> np.ndarray:
    """Fan-in-scaled uniform weights, zero biases, drawn layer by layer."""
    params = np.zeros(param_count(spec))
    offset = 0
    for out_dim, in_dim in spec.layer_shapes():
        bound = np.sqrt(1.0 / in_dim)
        params[offset : offset + out_dim * in_dim] = rng.uniform(
            -bound, bound, size=out_dim * in_dim
        )
        offset += out_dim * in_dim + out_dim  # biases stay zero
    return params


def mlp_init(spec: NetSpec, seed: int) -> np.ndarray:
    return init_params(spec, np.random.default_rng(seed))


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(name: str, out: np.ndarray) -> np.ndarray:
    """Derivative of the activation expressed through its output value."""
    if name == "tanh":
        return 1.0 - out * out
    if name == "relu":
        return (out > 0.0).astype(out.dtype)
    return np.ones_like(out)


def _as_batch(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2:
        return arr, False
    raise ContractViolationError(f"expected 1-D or 2-D input, got shape {arr.shape}")


def forward_cached(spec: NetSpec, params: np.ndarray, inputs) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass keeping every layer's output; cache[0] is the input batch."""
    x, _ = _as_batch(inputs)
    if x.shape[1] != spec.in_dim:
        raise ContractViolationError(f"input width {x.shape[1]} != spec input {spec.in_dim}")
    cache = [x]
    a = x
    for (w, b), act in zip(layer_views(spec, params), spec.activations):
        a = _activate(act, a @ w.T + b)
        cache.append(a)
    return a, cache


def mlp_forward(spec: NetSpec, params: np.ndarray, inputs) -> np.ndarray:
    """Pure forward pass; a 1-D input yields a 1-D output."""
    x, squeeze = _as_batch(inputs)
    y, _ = forward_cached(spec, params, x)
    return y[0] if squeeze else y


def backward(spec: NetSpec, params: np.ndarray, cache: list[np.ndarray],
             grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-mode sweep from d(loss)/d(output) to parameter and input gradients.

    grad_out has the output batch's shape; gradients are summed over the batch,
    so any 1/batch scaling belongs in grad_out.
    """
    views = layer_views(spec, params)
    grads = np.zeros_like(params)
    gviews = layer_views(spec, grads)
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != cache[-1].shape:
        raise ContractViolationError(
            f"grad_out shape {g.shape} != output shape {cache[-1].shape}"
        )
    for layer in range(spec.num_layers - 1, -1, -1):
        w, _ = views[layer]
        gw, gb = gviews[layer]
        gz = g * _activation_grad(spec.activations[layer], cache[layer + 1])
        gw += gz.T @ cache[layer]
        gb += gz.sum(axis=0)
        g = gz @ w
    return grads, g


def mlp_gradient(spec: NetSpec, params: np.ndarray, batch_inputs, batch_targets,
                 loss: str = "mse") -> tuple[float, np.ndarray]:
    """Loss and exact parameter gradient of the mean-squared error over a batch.

    MSE is averaged over both batch rows and output components.
    """
    if loss != "mse":
        raise ContractViolationError(f"unsupported loss {loss!r}")
    x, _ = _as_batch(batch_inputs)
    t, _ = _as_batch(batch_targets)
    if x.shape[0] == 0:
        raise ContractViolationError("batch must be nonempty")
    if t.shape != (x.shape[0], spec.out_dim):
        raise ContractViolationError(
            f"target shape {t.shape} != ({x.shape[0]}, {spec.out_dim})"
        )
    y, cache = forward_cached(spec, params, x)
    residual = y - t
    loss_value = float(np.mean(residual * residual))
    grad_out = 2.0 * residual / residual.size
    grads, _ = backward(spec, params, cache, grad_out)
    return loss_value, grads


@dataclass(eq=False)
class AdamState:
    """Adam moments for one ParamVector; step_count drives bias correction."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, n: int, beta1: float = 0.9, beta2: float = 0.999,
                   epsilon: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, epsilon)

    def copy(self) -> "AdamState":
        return AdamState(self.first_moment.copy(), self.second_moment.copy(),
                         self.step_count, self.beta1, self.beta2, self.epsilon)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              lr: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ContractViolationError("params, grads and Adam moments must share a shape")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, AdamState(m, v, t, state.beta1, state.beta2, state.epsilon)


def finite_difference(loss_fn, params: np.ndarray, coords=None, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of loss_fn at params over the given coordinates.

    Independent of the reverse-mode code above on purpose: it is the oracle the
    analytic gradients are checked against.
    """
    coords = list(range(params.size)) if coords is None else list(coords)
    out = np.zeros(len(coords))
    for k, i in enumerate(coords):
        bumped = params.copy()
        bumped[i] = params[i] + step
        up = loss_fn(bumped)
        bumped[i] = params[i] - step
        down = loss_fn(bumped)
        out[k] = (up - down) / (2.0 * step)
    return out
