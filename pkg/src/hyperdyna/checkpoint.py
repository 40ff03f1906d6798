"""Single-file binary checkpoint container.

Layout: magic ``HYPD``, u32 format version, u32 section count, then each
section as (u16 name length, utf-8 name, u64 payload length, payload bytes),
and finally the sha256 digest of everything before it.  Loading verifies the
magic, version and digest; truncation or bit rot surfaces as
CorruptCheckpointError.

Parameter vectors and all other float arrays are stored as a u64 element
count followed by little-endian float64 values.  Composite objects (agents,
hypernetworks, buffers) are encoded as a JSON skeleton whose array leaves are
replaced by indices into a packed array list ("tree" encoding below).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .diffnet import AdamState, NetSpec
from .dyna import BufferSet, ReplayBuffer
from .envsim import Observation, Transition
from .errors import CheckpointVersionError, ContractViolationError, CorruptCheckpointError
from .hyperworld import (HypernetState, NormProfile, RegularizationSnapshot,
                         TargetSpec, _chunk_table)
from .sac import AgentState

MAGIC = b"HYPD"
FORMAT_VERSION = 1


def pack_floats(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    return struct.pack("<Q", arr.size) + arr.astype("<f8").tobytes()


def unpack_floats(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    (n,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64)
    return arr, offset + 8 * n


def write_container(path, sections: dict[str, bytes]) -> None:
    body = bytearray()
    body += MAGIC
    body += struct.pack("<II", FORMAT_VERSION, len(sections))
    for name, payload in sections.items():
        encoded = name.encode("utf-8")
        body += struct.pack("<H", len(encoded)) + encoded
        body += struct.pack("<Q", len(payload)) + payload
    digest = hashlib.sha256(bytes(body)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(body) + digest)


def read_container(path) -> dict[str, bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 + 32 or blob[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint container")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    version, count = struct.unpack_from("<II", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    offset = len(MAGIC) + 8
    sections = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            name = body[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (payload_len,) = struct.unpack_from("<Q", body, offset)
            offset += 8
            sections[name] = body[offset : offset + payload_len]
            offset += payload_len
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: malformed section layout: {exc}") from exc
    if offset != len(body):
        raise CorruptCheckpointError(f"{path}: trailing bytes after the last section")
    return sections


# -- tree encoding: JSON skeleton plus packed float arrays ------------------

def _split_arrays(node, arrays: list[np.ndarray]):
    if isinstance(node, np.ndarray):
        arrays.append(node)
        return {"__array__": len(arrays) - 1, "shape": list(node.shape)}
    if isinstance(node, dict):
        return {k: _split_arrays(v, arrays) for k, v in node.items()}
    if isinstance(node, (list, tuple)):
        return [_split_arrays(v, arrays) for v in node]
    return node


def _join_arrays(node, arrays: list[np.ndarray]):
    if isinstance(node, dict):
        if "__array__" in node:
            return arrays[node["__array__"]].reshape(node["shape"])
        return {k: _join_arrays(v, arrays) for k, v in node.items()}
    if isinstance(node, list):
        return [_join_arrays(v, arrays) for v in node]
    return node


def pack_tree(tree) -> bytes:
    arrays: list[np.ndarray] = []
    skeleton = _split_arrays(tree, arrays)
    meta = json.dumps(skeleton, sort_keys=True).encode("utf-8")
    out = struct.pack("<Q", len(meta)) + meta
    out += struct.pack("<Q", len(arrays))
    for arr in arrays:
        out += pack_floats(arr.ravel())
    return out


def unpack_tree(data: bytes):
    (meta_len,) = struct.unpack_from("<Q", data, 0)
    offset = 8
    skeleton = json.loads(data[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    (n_arrays,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    arrays = []
    for _ in range(n_arrays):
        arr, offset = unpack_floats(data, offset)
        arrays.append(arr)
    return _join_arrays(skeleton, arrays)


# -- object codecs -----------------------------------------------------------

def _adam_tree(a: AdamState) -> dict:
    return {"m": a.first_moment, "v": a.second_moment, "step_count": a.step_count,
            "beta1": a.beta1, "beta2": a.beta2, "epsilon": a.epsilon}


def _adam_from(d: dict) -> AdamState:
    return AdamState(d["m"], d["v"], int(d["step_count"]), d["beta1"], d["beta2"], d["epsilon"])


def agent_tree(agent: AgentState) -> dict:
    return {
        "obs_dim": agent.obs_dim,
        "action_dim": agent.action_dim,
        "actor_spec": agent.actor_spec.to_dict(),
        "critic_spec": agent.critic_spec.to_dict(),
        "actor": agent.actor,
        "critic1": agent.critic1,
        "critic2": agent.critic2,
        "target_critic1": agent.target_critic1,
        "target_critic2": agent.target_critic2,
        "adam_actor": _adam_tree(agent.adam_actor),
        "adam_critic1": _adam_tree(agent.adam_critic1),
        "adam_critic2": _adam_tree(agent.adam_critic2),
        "log_entropy_coeff": agent.log_entropy_coeff,
        "adam_entropy": _adam_tree(agent.adam_entropy),
        "target_entropy": agent.target_entropy,
    }


def agent_from_tree(d: dict) -> AgentState:
    return AgentState(
        obs_dim=int(d["obs_dim"]),
        action_dim=int(d["action_dim"]),
        actor_spec=NetSpec.from_dict(d["actor_spec"]),
        critic_spec=NetSpec.from_dict(d["critic_spec"]),
        actor=d["actor"],
        critic1=d["critic1"],
        critic2=d["critic2"],
        target_critic1=d["target_critic1"],
        target_critic2=d["target_critic2"],
        adam_actor=_adam_from(d["adam_actor"]),
        adam_critic1=_adam_from(d["adam_critic1"]),
        adam_critic2=_adam_from(d["adam_critic2"]),
        log_entropy_coeff=float(d["log_entropy_coeff"]),
        adam_entropy=_adam_from(d["adam_entropy"]),
        target_entropy=float(d["target_entropy"]),
    )


def hypernet_tree(h: HypernetState) -> dict:
    return {
        "dynamics_spec": h.targets.dynamics.to_dict(),
        "reward_spec": h.targets.reward.to_dict(),
        "hyper_spec": h.hyper_spec.to_dict(),
        "params": h.params,
        "adam": _adam_tree(h.adam),
        "noise_dim": h.noise_dim,
        "noise_sigma": h.noise_sigma,
        "norm": {"temp_center_c": h.norm.temp_center_c,
                 "temp_scale_c": h.norm.temp_scale_c,
                 "reward_scale": h.norm.reward_scale},
        "chunks": [{"kind": e.kind, "layer": e.layer, "offset": e.offset, "size": e.size}
                   for e in h.chunks],
    }


def hypernet_from_tree(d: dict) -> HypernetState:
    targets = TargetSpec(NetSpec.from_dict(d["dynamics_spec"]),
                         NetSpec.from_dict(d["reward_spec"]))
    h = HypernetState(
        targets=targets,
        hyper_spec=NetSpec.from_dict(d["hyper_spec"]),
        params=d["params"],
        adam=_adam_from(d["adam"]),
        noise_dim=int(d["noise_dim"]),
        noise_sigma=float(d["noise_sigma"]),
        norm=NormProfile(**d["norm"]),
        chunks=_chunk_table(targets),
    )
    stored = [(e["kind"], e["layer"], e["offset"], e["size"]) for e in d["chunks"]]
    rebuilt = [(e.kind, e.layer, e.offset, e.size) for e in h.chunks]
    if stored != rebuilt:
        raise CorruptCheckpointError("hypernet chunk table does not match its target specs")
    return h


def snapshot_tree(snapshot: RegularizationSnapshot) -> dict:
    return {str(tid): {kind: arr for kind, arr in kinds.items()}
            for tid, kinds in snapshot.entries.items()}


def snapshot_from_tree(d: dict) -> RegularizationSnapshot:
    entries = {}
    for tid, kinds in d.items():
        per_kind = {}
        for kind, arr in kinds.items():
            arr = np.asarray(arr)
            arr.flags.writeable = False
            per_kind[kind] = arr
        entries[int(tid)] = per_kind
    return RegularizationSnapshot(entries)


def _obs_matrix(obs_list: list[Observation]) -> np.ndarray:
    return np.array([[o.time_sin, o.time_cos, o.zone_temp_c, *o.forecast_c]
                     for o in obs_list])


def _obs_from_row(row: np.ndarray) -> Observation:
    return Observation(float(row[0]), float(row[1]), float(row[2]),
                       tuple(float(f) for f in row[3:]))


def buffer_tree(buf: ReplayBuffer) -> dict:
    items = buf.items()
    n = len(items)
    pad = np.zeros((n, 3))
    pdim = np.zeros(n)
    for i, t in enumerate(items):
        pdim[i] = len(t.policy_action)
        pad[i, : len(t.policy_action)] = t.policy_action
    return {
        "capacity": buf.capacity,
        "kind": buf.kind,
        "count": n,
        "obs": _obs_matrix([t.obs for t in items]) if n else np.zeros((0, 0)),
        "next_obs": _obs_matrix([t.next_obs for t in items]) if n else np.zeros((0, 0)),
        "actions": np.array([t.actions for t in items]) if n else np.zeros((0, 3)),
        "policy_action": pad,
        "policy_dim": pdim,
        "reward": np.array([t.reward for t in items]),
        "setpoints": np.array([t.setpoints for t in items]) if n else np.zeros((0, 2)),
        "task_id": np.array([float(t.task_id) for t in items]),
        "synthetic": np.array([1.0 if t.synthetic else 0.0 for t in items]),
        "terminal": np.array([1.0 if t.terminal else 0.0 for t in items]),
    }


def buffer_from_tree(d: dict) -> ReplayBuffer:
    buf = ReplayBuffer(int(d["capacity"]), d["kind"])
    n = int(d["count"])
    for i in range(n):
        pdim = int(d["policy_dim"][i])
        buf.push(Transition(
            obs=_obs_from_row(d["obs"][i]),
            actions=tuple(float(a) for a in d["actions"][i]),
            next_obs=_obs_from_row(d["next_obs"][i]),
            reward=float(d["reward"][i]),
            setpoints=tuple(float(s) for s in d["setpoints"][i]),
            task_id=int(d["task_id"][i]),
            policy_action=tuple(float(a) for a in d["policy_action"][i][:pdim]),
            synthetic=bool(d["synthetic"][i]),
            terminal=bool(d["terminal"][i]),
        ))
    return buf


@dataclass
class CheckpointBundle:
    """Decoded contents of a checkpoint container."""

    manifest: dict
    agent: AgentState | None = None
    hypernet: HypernetState | None = None
    snapshot: RegularizationSnapshot | None = None
    buffers: BufferSet | None = None
    rng_states: dict | None = None
    metrics_text: str = ""
    sections: dict | None = None


def checkpoint_save(path, agent: AgentState | None = None,
                    hypernet: HypernetState | None = None,
                    snapshot: RegularizationSnapshot | None = None,
                    buffers: BufferSet | None = None,
                    rng_states: dict | None = None,
                    manifest: dict | None = None,
                    metrics_text: str = "",
                    extra_sections: dict[str, bytes] | None = None) -> None:
    """Write a container with one named section per provided piece of state."""
    sections: dict[str, bytes] = {}
    sections["manifest"] = json.dumps(manifest or {}, sort_keys=True).encode("utf-8")
    if agent is not None:
        sections["agent"] = pack_tree(agent_tree(agent))
    if hypernet is not None:
        sections["hypernet"] = pack_tree(hypernet_tree(hypernet))
    if snapshot is not None:
        sections["snapshot"] = pack_tree(snapshot_tree(snapshot))
    if buffers is not None:
        sections["buffers/m_alpha"] = pack_tree(buffer_tree(buffers.m_alpha))
        sections["buffers/m_beta"] = pack_tree(buffer_tree(buffers.m_beta))
        sections["buffers/m_gamma"] = pack_tree(buffer_tree(buffers.m_gamma))
    if rng_states is not None:
        sections["rng"] = json.dumps(rng_states, sort_keys=True).encode("utf-8")
    if metrics_text:
        sections["metrics"] = metrics_text.encode("utf-8")
    for name, payload in (extra_sections or {}).items():
        if name in sections:
            raise ContractViolationError(f"duplicate checkpoint section {name!r}")
        sections[name] = payload
    write_container(path, sections)


def checkpoint_load(path) -> CheckpointBundle:
    sections = read_container(path)
    try:
        bundle = CheckpointBundle(manifest=json.loads(sections["manifest"].decode("utf-8")))
        if "agent" in sections:
            bundle.agent = agent_from_tree(unpack_tree(sections["agent"]))
        if "hypernet" in sections:
            bundle.hypernet = hypernet_from_tree(unpack_tree(sections["hypernet"]))
        if "snapshot" in sections:
            bundle.snapshot = snapshot_from_tree(unpack_tree(sections["snapshot"]))
        if "buffers/m_alpha" in sections:
            bundle.buffers = BufferSet(
                m_alpha=buffer_from_tree(unpack_tree(sections["buffers/m_alpha"])),
                m_beta=buffer_from_tree(unpack_tree(sections["buffers/m_beta"])),
                m_gamma=buffer_from_tree(unpack_tree(sections["buffers/m_gamma"])),
            )
        if "rng" in sections:
            bundle.rng_states = json.loads(sections["rng"].decode("utf-8"))
        if "metrics" in sections:
            bundle.metrics_text = sections["metrics"].decode("utf-8")
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: undecodable section: {exc}") from exc
    bundle.sections = sections
    return bundle
