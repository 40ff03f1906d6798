"""Deterministic seed derivation and checkpointable RNG streams.

Every random stream in an experiment is a numpy PCG64 generator whose seed is
derived from the master seed through a splitmix64 chain over a label path,
e.g. ``derive_seed(master, "mbrl", "task2", "env", episode)``.  Labels are
absorbed one at a time, so adding a new variant or stream never perturbs the
seeds of existing ones.

Generators are serialized via ``bit_generator.state`` (plain ints and strings),
which lets checkpoints capture a stream mid-consumption and resume it exactly.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 step: the standard finalizer used for seed expansion."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _absorb(state: int, label) -> int:
    if isinstance(label, int):
        data = label.to_bytes(8, "little", signed=True)
    else:
        data = str(label).encode("utf-8")
    for i in range(0, len(data), 8):
        chunk = int.from_bytes(data[i : i + 8], "little")
        state = splitmix64(state ^ chunk)
    # Absorb the length so "ab","c" and "a","bc" cannot collide.
    return splitmix64(state ^ len(data))


def derive_seed(master_seed: int, *labels) -> int:
    """Derive a child seed from a master seed and a path of labels."""
    state = splitmix64(master_seed & _MASK64)
    for label in labels:
        state = _absorb(state, label)
    return state


def make_rng(master_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *labels))


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's position."""
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


class RngBundle:
    """Named generator streams for one (variant, task) stage.

    Streams:
      env        episode seeds for environment resets
      sac        agent init, action sampling, update reparameterization draws
      sample     replay-batch index draws for SAC updates
      model      everything hypernetwork-related: init noise, train batches,
                 ensemble noise, synthetic-rollout sampling and policy draws
    """

    STREAMS = ("env", "sac", "sample", "model")

    def __init__(self, master_seed: int, *scope):
        self.scope = tuple(scope)
        for name in self.STREAMS:
            setattr(self, name, make_rng(master_seed, *scope, name))

    def state(self) -> dict:
        return {
            "scope": list(self.scope),
            "streams": {name: rng_state(getattr(self, name)) for name in self.STREAMS},
        }

    @classmethod
    def from_state(cls, state: dict) -> "RngBundle":
        bundle = cls.__new__(cls)
        bundle.scope = tuple(state["scope"])
        for name in cls.STREAMS:
            setattr(bundle, name, restore_rng(state["streams"][name]))
        return bundle
