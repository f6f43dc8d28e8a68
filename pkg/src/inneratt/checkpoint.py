"""Binary checkpoints with bit-exact round trips.

Layout, little-endian throughout: magic ``IATT``, format version (u32),
section count (u32), then length-prefixed named sections. A section is
``u32 name_len | name utf-8 | u8 kind | payload`` where kind 0 is a float64
array (``u8 ndim | u32 dims... | f64 data``) and kind 1 is a UTF-8 JSON
payload (``u64 byte_len | bytes``). Parameters, optimizer moments, the
replay buffer, and any pending on-policy segment are array sections; the
config snapshot, counters, accumulators, and generator states are JSON
sections. Loading a file and saving it again reproduces it byte for byte,
and resuming a deterministic run from a checkpoint continues it exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, config_from_dict
from .errors import BadMagicError, TruncatedCheckpointError, VersionMismatchError

MAGIC = b"IATT"
VERSION = 1

_KIND_ARRAY = 0
_KIND_JSON = 1


@dataclass
class Checkpoint:
    """Everything needed to reconstruct a training run."""

    config: ExperimentConfig
    arrays: dict
    meta: dict
    version: int = VERSION


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, ckpt):
    sections = []
    sections.append(("config", _KIND_JSON, _canonical_json(ckpt.config.to_dict())))
    sections.append(("meta", _KIND_JSON, _canonical_json(ckpt.meta)))
    for name, array in ckpt.arrays.items():
        # asarray keeps 0-d shapes, unlike ascontiguousarray
        sections.append((name, _KIND_ARRAY, np.asarray(array, dtype="<f8", order="C")))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", ckpt.version, len(sections)))
        for name, kind, payload in sections:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", kind))
            if kind == _KIND_ARRAY:
                fh.write(struct.pack("<B", payload.ndim))
                fh.write(struct.pack(f"<{payload.ndim}I", *payload.shape))
                fh.write(payload.tobytes())
            else:
                fh.write(struct.pack("<Q", len(payload)))
                fh.write(payload)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"file ends at byte {len(self.data)}, needed {self.pos + n}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    reader = _Reader(data)
    magic = reader.take(4)
    if magic != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, found {magic!r}")
    version, n_sections = reader.unpack("<II")
    if version != VERSION:
        raise VersionMismatchError(f"file version {version}, supported version {VERSION}")
    config = None
    meta = None
    arrays = {}
    for _ in range(n_sections):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (kind,) = reader.unpack("<B")
        if kind == _KIND_ARRAY:
            (ndim,) = reader.unpack("<B")
            shape = reader.unpack(f"<{ndim}I")
            count = int(np.prod(shape)) if ndim else 1
            raw = reader.take(8 * count)
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        elif kind == _KIND_JSON:
            (length,) = reader.unpack("<Q")
            doc = json.loads(reader.take(length).decode("utf-8"))
            if name == "config":
                config = config_from_dict(doc)
            elif name == "meta":
                meta = doc
        else:
            raise TruncatedCheckpointError(f"unknown section kind {kind} for {name!r}")
    if config is None or meta is None:
        raise TruncatedCheckpointError("missing config or meta section")
    return Checkpoint(config=config, arrays=arrays, meta=meta)


# ---------------------------------------------------------------------------
# bridging to training state


def _rng_state(rng):
    return rng.bit_generator.state


def _make_rng(state_dict):
    rng = np.random.default_rng()
    rng.bit_generator.state = state_dict
    return rng


def checkpoint_from_state(state):
    arrays = {}
    for name, a in state.critic_params.items():
        arrays[f"param.{name}"] = a
    for name, a in state.actor_params.items():
        arrays[f"param.{name}"] = a
    for name, a in state.target_params.items():
        arrays[f"target.{name}"] = a
    adam_steps = {}
    for label, opt in (("critic", state.adam_critic), ("actor", state.adam_actor)):
        step = 0
        for name, st in opt.states.items():
            arrays[f"adam.{name}.m"] = st.m
            arrays[f"adam.{name}.v"] = st.v
            step = st.step
        adam_steps[label] = step

    buf = state.buffer
    arrays["buffer.obs"] = buf.obs[:buf.size]
    arrays["buffer.actions"] = buf.actions[:buf.size].astype(float)
    arrays["buffer.rewards"] = buf.rewards[:buf.size]
    arrays["buffer.next_obs"] = buf.next_obs[:buf.size]
    arrays["buffer.dones"] = buf.dones[:buf.size]

    pending = state.ppo_pending
    if pending:
        arrays["ppo.obs"] = np.stack([t.obs for t in pending])
        arrays["ppo.actions"] = np.stack([t.actions for t in pending]).astype(float)
        arrays["ppo.behavior_probs"] = np.stack([t.behavior_probs for t in pending])

    meta = {
        "episodes_done": state.episodes_done,
        "env_steps": state.env_steps,
        "updates_done": state.updates_done,
        "update_baseline": state.update_baseline,
        "buffer_ptr": buf.ptr,
        "buffer_size": buf.size,
        "adam_steps": adam_steps,
        "interval": state.interval.to_meta(),
        "trainer_rng": _rng_state(state.trainer_rng),
        "worker_rngs": [_rng_state(r.rng) for r in state.runners],
    }
    return Checkpoint(config=state.cfg, arrays=arrays, meta=meta)


def state_from_checkpoint(ckpt):
    from .autodiff import Adam, AdamState
    from .trainer import EnvRunner, ReplayBuffer, TrainState, Transition, _Interval

    cfg = ckpt.config
    critic_params, actor_params, target_params = {}, {}, {}
    for name, a in ckpt.arrays.items():
        if name.startswith("param.critic."):
            critic_params[name[len("param."):]] = a
        elif name.startswith("param.actor."):
            actor_params[name[len("param."):]] = a
        elif name.startswith("target."):
            target_params[name[len("target."):]] = a

    adam_critic, adam_actor = Adam(cfg.lr), Adam(cfg.lr)
    steps = ckpt.meta["adam_steps"]
    for name in critic_params:
        m, v = ckpt.arrays.get(f"adam.{name}.m"), ckpt.arrays.get(f"adam.{name}.v")
        if m is not None:
            adam_critic.states[name] = AdamState(m=m, v=v, step=steps["critic"])
    for name in actor_params:
        m, v = ckpt.arrays.get(f"adam.{name}.m"), ckpt.arrays.get(f"adam.{name}.v")
        if m is not None:
            adam_actor.states[name] = AdamState(m=m, v=v, step=steps["actor"])

    n_robots = ckpt.arrays["buffer.obs"].shape[1] if ckpt.meta["buffer_size"] else 4
    buffer = ReplayBuffer(cfg.buffer_capacity, n_robots)
    size = ckpt.meta["buffer_size"]
    buffer.obs[:size] = ckpt.arrays["buffer.obs"]
    buffer.actions[:size] = ckpt.arrays["buffer.actions"].astype(np.int64)
    buffer.rewards[:size] = ckpt.arrays["buffer.rewards"]
    buffer.next_obs[:size] = ckpt.arrays["buffer.next_obs"]
    buffer.dones[:size] = ckpt.arrays["buffer.dones"]
    buffer.ptr = ckpt.meta["buffer_ptr"]
    buffer.size = size

    runners = []
    for rng_state in ckpt.meta["worker_rngs"]:
        runners.append(EnvRunner(cfg, _make_rng(rng_state)))

    pending = []
    if "ppo.obs" in ckpt.arrays:
        obs = ckpt.arrays["ppo.obs"]
        actions = ckpt.arrays["ppo.actions"].astype(np.int64)
        probs = ckpt.arrays["ppo.behavior_probs"]
        for k in range(obs.shape[0]):
            pending.append(Transition(
                obs=obs[k], actions=actions[k], rewards=None,
                next_obs=None, done=False, behavior_probs=probs[k],
            ))

    state = TrainState(
        cfg=cfg,
        critic_params=critic_params,
        actor_params=actor_params,
        target_params=target_params,
        adam_critic=adam_critic,
        adam_actor=adam_actor,
        buffer=buffer,
        runners=runners,
        trainer_rng=_make_rng(ckpt.meta["trainer_rng"]),
        episodes_done=ckpt.meta["episodes_done"],
        env_steps=ckpt.meta["env_steps"],
        updates_done=ckpt.meta["updates_done"],
        update_baseline=ckpt.meta["update_baseline"],
        ppo_pending=pending,
    )
    state.interval = _Interval.from_meta(ckpt.meta["interval"], cfg.heads)
    return state
