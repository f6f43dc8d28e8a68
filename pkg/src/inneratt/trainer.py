"""Centralized training with decentralized execution.

Rollout workers hold independent seeded environments and step them with the
current actor snapshot; the trainer alternates collection cycles (one episode
per worker) with critic/actor updates at a fixed env-step cadence. Critic
regression targets are soft (entropy-regularized) one-step returns against a
slowly tracking target network. The actor trains either with an expected
soft policy gradient over its own action set (td) or with a clipped-ratio
surrogate on on-policy segments (ppo).

Workers only ever read from an immutable parameter snapshot; all parameter
mutation happens in the trainer via functional Adam updates, so publishing a
snapshot is a plain dict reference hand-off.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, ParamLeaves, Tape, Tensor
from .critic import critic_forward, init_critic_params
from .env import N_ACTIONS, OBS_DIM, TASK1, TASK2, RescueEnv
from .errors import ContractError, DimensionError

METRICS_HEADER = (
    "episode,mean_reward,critic_loss,actor_loss,"
    "entropy_h0,entropy_h1,entropy_h2,entropy_h3,rescues_task1,rescues_task2"
)


# ---------------------------------------------------------------------------
# policy networks


def init_actor_params(rng, n_robots, obs_dim=OBS_DIM, n_actions=N_ACTIONS,
                      hidden=128, prefix="actor"):
    params = {}
    for i in range(n_robots):
        params[f"{prefix}.robot{i}.w1"] = ad.uniform_init(rng, (obs_dim, hidden), obs_dim)
        params[f"{prefix}.robot{i}.b1"] = ad.uniform_init(rng, (hidden,), obs_dim)
        params[f"{prefix}.robot{i}.w2"] = ad.uniform_init(rng, (hidden, n_actions), hidden)
        params[f"{prefix}.robot{i}.b2"] = ad.uniform_init(rng, (n_actions,), hidden)
    return params


def policy_logits(params, i, obs, prefix="actor"):
    """Numpy forward pass of robot i's policy. Accepts a single observation
    (obs_dim,) or a batch (B, obs_dim); the policy reads nothing else."""
    w1 = params[f"{prefix}.robot{i}.w1"]
    obs = np.asarray(obs, float)
    if obs.shape[-1] != w1.shape[0]:
        raise DimensionError(
            f"policy {i} consumes observations of length {w1.shape[0]}, "
            f"got {obs.shape[-1]}"
        )
    h = np.maximum(obs @ w1 + params[f"{prefix}.robot{i}.b1"], 0.0)
    return h @ params[f"{prefix}.robot{i}.w2"] + params[f"{prefix}.robot{i}.b2"]


def np_softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def policy_probs(params, i, obs, prefix="actor"):
    return np_softmax(policy_logits(params, i, obs, prefix), axis=-1)


def actor_forward(leaves, i, obs_tensor, prefix="actor"):
    """Tensor (differentiable) version of :func:`policy_logits`."""
    h = ad.relu(obs_tensor @ leaves[f"{prefix}.robot{i}.w1"] + leaves[f"{prefix}.robot{i}.b1"])
    return h @ leaves[f"{prefix}.robot{i}.w2"] + leaves[f"{prefix}.robot{i}.b2"]


def _sample_rows(probs, rng):
    """One categorical draw per row of a (B, A) probability matrix."""
    u = rng.random((probs.shape[0], 1))
    idx = (probs.cumsum(axis=1) < u).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def _onehot(actions, n_actions):
    actions = np.asarray(actions, int)
    out = np.zeros(actions.shape + (n_actions,))
    np.put_along_axis(out, actions[..., None], 1.0, axis=-1)
    return out


# ---------------------------------------------------------------------------
# experience


@dataclass
class Transition:
    obs: np.ndarray        # (N, obs_dim)
    actions: np.ndarray    # (N,)
    rewards: np.ndarray    # (N,)
    next_obs: np.ndarray   # (N, obs_dim)
    done: bool
    behavior_probs: np.ndarray | None = None  # (N, A), stored for ppo


class ReplayBuffer:
    """Bounded FIFO store backed by preallocated arrays."""

    def __init__(self, capacity, n_robots, obs_dim=OBS_DIM):
        self.capacity = capacity
        self.obs = np.zeros((capacity, n_robots, obs_dim))
        self.actions = np.zeros((capacity, n_robots), dtype=np.int64)
        self.rewards = np.zeros((capacity, n_robots))
        self.next_obs = np.zeros((capacity, n_robots, obs_dim))
        self.dones = np.zeros(capacity)
        self.ptr = 0
        self.size = 0

    def add(self, tr):
        i = self.ptr
        self.obs[i] = tr.obs
        self.actions[i] = tr.actions
        self.rewards[i] = tr.rewards
        self.next_obs[i] = tr.next_obs
        self.dones[i] = float(tr.done)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng, batch):
        """Uniform sample without replacement within the batch."""
        if batch > self.size:
            raise ContractError(f"batch {batch} exceeds buffer size {self.size}")
        idx = rng.choice(self.size, size=batch, replace=False)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "dones": self.dones[idx],
        }


class EnvRunner:
    """One rollout worker: an environment plus the generator that drives both
    its resets and its action sampling. Reset is lazy so a finished episode
    leaves the generator untouched until the next call."""

    def __init__(self, cfg, rng):
        self.env = RescueEnv(cfg.scenario, rng, cfg.env_params())
        self.rng = rng
        self.needs_reset = True
        self.obs = None
        self.episode_reward = 0.0

    def run_steps(self, snapshot, n_steps, *, sample=True, store_probs=False):
        transitions, events, finished = [], [], []
        n_robots = self.env.n_robots
        for _ in range(n_steps):
            if self.needs_reset:
                self.obs = self.env.reset()
                self.episode_reward = 0.0
                self.needs_reset = False
            obs = np.asarray(self.obs)
            probs = np.stack([policy_probs(snapshot, i, obs[i]) for i in range(n_robots)])
            if sample:
                u = self.rng.random(n_robots)
                actions = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
                actions = np.minimum(actions, probs.shape[1] - 1)
            else:
                actions = probs.argmax(axis=1)
            next_obs, rewards, step_events, done = self.env.step(actions)
            transitions.append(Transition(
                obs=obs, actions=actions, rewards=rewards,
                next_obs=np.asarray(next_obs), done=done,
                behavior_probs=probs if store_probs else None,
            ))
            events.extend(step_events)
            self.episode_reward += float(rewards.mean())
            self.obs = next_obs
            if done:
                finished.append(self.episode_reward)
                self.needs_reset = True
        return transitions, events, finished


def collect(snapshot, runners, steps_per_worker, *, executor=None, sample=True,
            store_probs=False):
    """Run every worker for `steps_per_worker` steps against one immutable
    snapshot. Results are concatenated in worker order, so the outcome is
    independent of thread interleaving."""

    def job(runner):
        return runner.run_steps(snapshot, steps_per_worker,
                                sample=sample, store_probs=store_probs)

    if executor is None or len(runners) == 1:
        results = [job(r) for r in runners]
    else:
        results = list(executor.map(job, runners))
    transitions, events, finished = [], [], []
    for t, e, f in results:
        transitions.extend(t)
        events.extend(e)
        finished.extend(f)
    return transitions, events, finished


# ---------------------------------------------------------------------------
# critic update


def soft_targets(batch, target_params, actor_params, cfg, rng):
    """Per-robot regression targets y_i = r_i + gamma * (1 - done) * v_i with
    v_i the exact expectation over robot i's next actions of the target
    action values minus the entropy temperature times the log probability.
    Teammates' next actions are single samples from their current policies.
    Returns a (B, N) array; computed without gradient recording."""
    next_obs = batch["next_obs"]
    n_robots = next_obs.shape[1]
    probs, logps, sampled = [], [], []
    for i in range(n_robots):
        logits = policy_logits(actor_params, i, next_obs[:, i])
        logp = logits - logits.max(axis=1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
        p = np.exp(logp)
        probs.append(p)
        logps.append(logp)
        sampled.append(_sample_rows(p, rng))
    sampled = np.stack(sampled, axis=1)  # (B, N)

    leaves = ParamLeaves(target_params)
    obs_t = [Tensor(next_obs[:, i]) for i in range(n_robots)]
    act_t = [Tensor(_onehot(sampled[:, i], N_ACTIONS)) for i in range(n_robots)]
    q_vectors, _ = critic_forward(
        leaves, obs_t, act_t, heads=cfg.heads,
        uniform_attention=(cfg.critic == "baseline"),
    )
    targets = np.zeros((next_obs.shape[0], n_robots))
    not_done = 1.0 - batch["dones"]
    for i in range(n_robots):
        soft_v = (probs[i] * (q_vectors[i].data - cfg.entropy_temp * logps[i])).sum(axis=1)
        targets[:, i] = batch["rewards"][:, i] + cfg.gamma * not_done * soft_v
    return targets


def _alpha_entropies(alphas, heads):
    """Mean attention entropy per head over the batch and all robots."""
    out = np.zeros(heads)
    for h in range(heads):
        total, count = 0.0, 0
        for robot_alphas in alphas:
            a = robot_alphas[h].data
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(a > 0, a * np.log(a), 0.0)
            total += -terms.sum(axis=1).sum()
            count += a.shape[0]
        out[h] = total / count
    return out


def critic_update(batch, critic_params, target_params, actor_params, optimizer,
                  cfg, rng, *, return_q=False):
    """One regression step of every robot's action value toward its soft
    target. Returns (new params, scalar loss, per-head attention entropy);
    with return_q also the forward pass's per-robot action-value arrays, so
    the actor update can reuse them instead of re-running the critic."""
    uniform = cfg.critic == "baseline"
    targets = soft_targets(batch, target_params, actor_params, cfg, rng)
    n_robots = batch["obs"].shape[1]
    leaves = ParamLeaves(critic_params)
    with Tape() as tape:
        obs_t = [Tensor(batch["obs"][:, i]) for i in range(n_robots)]
        act_t = [Tensor(_onehot(batch["actions"][:, i], N_ACTIONS)) for i in range(n_robots)]
        q_vectors, alphas = critic_forward(
            leaves, obs_t, act_t, heads=cfg.heads, uniform_attention=uniform,
        )
        loss = None
        for i in range(n_robots):
            taken_q = ad.tsum(q_vectors[i] * act_t[i], axis=1)
            err = taken_q - Tensor(targets[:, i])
            term = ad.tmean(err * err)
            loss = term if loss is None else loss + term
        ad.backward(tape, loss)
    new_params = optimizer.update(critic_params, leaves.grads())
    entropies = _alpha_entropies(alphas, cfg.heads)
    if return_q:
        return new_params, float(loss.data), entropies, [q.data for q in q_vectors]
    return new_params, float(loss.data), entropies


def soft_update_targets(params, targets, tau):
    """target <- (1 - tau) * target + tau * params, elementwise."""
    out = {}
    for name, target in targets.items():
        source = params[name]
        if source.shape != target.shape:
            raise DimensionError(
                f"soft update shape mismatch for {name}: {source.shape} vs {target.shape}"
            )
        out[name] = (1.0 - tau) * target + tau * source
    return out


# ---------------------------------------------------------------------------
# actor updates


def _critic_q_constants(batch, critic_params, cfg):
    """Action-value vectors for every robot on the batch, no gradients."""
    n_robots = batch["obs"].shape[1]
    leaves = ParamLeaves(critic_params)
    obs_t = [Tensor(batch["obs"][:, i]) for i in range(n_robots)]
    act_t = [Tensor(_onehot(batch["actions"][:, i], N_ACTIONS)) for i in range(n_robots)]
    q_vectors, _ = critic_forward(
        leaves, obs_t, act_t, heads=cfg.heads,
        uniform_attention=(cfg.critic == "baseline"),
    )
    return [q.data for q in q_vectors]


def counterfactual_baselines(actor_params, obs, q_constants):
    """Expected action value of each robot's current policy, held constant
    (stop-gradient) inside the actor loss."""
    out = []
    for i, q in enumerate(q_constants):
        p = policy_probs(actor_params, i, obs[:, i])
        out.append((p * q).sum(axis=1, keepdims=True))
    return out


def td_actor_loss(leaves, obs, q_constants, baselines, cfg):
    """Negated expected-improvement objective: for each robot, the policy's
    expected advantage over the counterfactual baseline plus the entropy
    bonus, averaged over the batch and summed over robots. The action values
    and baselines are constants; only the policy is differentiated."""
    loss = None
    for i, q in enumerate(q_constants):
        logits = actor_forward(leaves, i, Tensor(obs[:, i]))
        logp = ad.log_softmax(logits, axis=1)
        p = ad.exp(logp)
        advantage = Tensor(q - baselines[i])
        gain = ad.tsum(p * advantage, axis=1) - cfg.entropy_temp * ad.tsum(p * logp, axis=1)
        term = -ad.tmean(gain)
        loss = term if loss is None else loss + term
    return loss


def actor_update_td(batch, actor_params, critic_params, optimizer, cfg,
                    q_constants=None):
    """Pass q_constants to reuse action values already computed on this batch
    (e.g. by critic_update); otherwise the critic is evaluated here."""
    if q_constants is None:
        q_constants = _critic_q_constants(batch, critic_params, cfg)
    baselines = counterfactual_baselines(actor_params, batch["obs"], q_constants)
    leaves = ParamLeaves(actor_params)
    with Tape() as tape:
        loss = td_actor_loss(leaves, batch["obs"], q_constants, baselines, cfg)
        ad.backward(tape, loss)
    return optimizer.update(actor_params, leaves.grads()), float(loss.data)


def ppo_advantages(segment, critic_params, cfg):
    """Per-robot advantage of the taken action over the behavior policy's
    expected action value, from the critic's per-action vectors."""
    q_constants = _critic_q_constants(segment, critic_params, cfg)
    n_robots = segment["obs"].shape[1]
    adv = np.zeros((segment["obs"].shape[0], n_robots))
    for i in range(n_robots):
        q = q_constants[i]
        taken = np.take_along_axis(q, segment["actions"][:, i:i + 1], axis=1)[:, 0]
        baseline = (segment["behavior_probs"][:, i] * q).sum(axis=1)
        adv[:, i] = taken - baseline
    return adv


def ppo_actor_loss(leaves, segment, advantages, cfg):
    """Negated clipped-surrogate objective summed over robots."""
    n_robots = segment["obs"].shape[1]
    loss = None
    for i in range(n_robots):
        onehot = _onehot(segment["actions"][:, i], N_ACTIONS)
        old_logp = np.log(
            np.take_along_axis(segment["behavior_probs"][:, i],
                               segment["actions"][:, i:i + 1], axis=1)[:, 0]
        )
        logits = actor_forward(leaves, i, Tensor(segment["obs"][:, i]))
        logp_taken = ad.tsum(ad.log_softmax(logits, axis=1) * Tensor(onehot), axis=1)
        ratio = ad.exp(logp_taken - Tensor(old_logp))
        adv = Tensor(advantages[:, i])
        surrogate = ad.minimum(
            ratio * adv,
            ad.clip(ratio, 1.0 - cfg.ppo_clip, 1.0 + cfg.ppo_clip) * adv,
        )
        term = -ad.tmean(surrogate)
        loss = term if loss is None else loss + term
    return loss


def actor_update_ppo(segment, actor_params, critic_params, optimizer, cfg):
    """Clipped-surrogate update over an on-policy segment: the advantages are
    computed once from the stored behavior probabilities, then the actor takes
    `ppo_epochs` Adam steps on the surrogate."""
    if segment.get("behavior_probs") is None:
        raise ContractError("ppo segment is missing stored behavior probabilities")
    advantages = ppo_advantages(segment, critic_params, cfg)
    loss_value = math.nan
    for _ in range(cfg.ppo_epochs):
        leaves = ParamLeaves(actor_params)
        with Tape() as tape:
            loss = ppo_actor_loss(leaves, segment, advantages, cfg)
            ad.backward(tape, loss)
        actor_params = optimizer.update(actor_params, leaves.grads())
        loss_value = float(loss.data)
    return actor_params, loss_value


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsRecord:
    episode: int
    mean_reward: float
    critic_loss: float
    actor_loss: float
    entropy: tuple
    rescues_task1: int
    rescues_task2: int

    def csv_row(self):
        cells = [str(self.episode), repr(self.mean_reward), repr(self.critic_loss),
                 repr(self.actor_loss)]
        cells += [repr(h) for h in self.entropy]
        cells += [str(self.rescues_task1), str(self.rescues_task2)]
        return ",".join(cells)

    @classmethod
    def from_csv_row(cls, row):
        parts = row.strip().split(",")
        return cls(
            episode=int(parts[0]), mean_reward=float(parts[1]),
            critic_loss=float(parts[2]), actor_loss=float(parts[3]),
            entropy=tuple(float(x) for x in parts[4:8]),
            rescues_task1=int(parts[8]), rescues_task2=int(parts[9]),
        )


@dataclass
class _Interval:
    """Accumulators for one metrics window."""

    reward_sum: float = 0.0
    episode_count: int = 0
    critic_loss_sum: float = 0.0
    critic_loss_count: int = 0
    actor_loss_sum: float = 0.0
    actor_loss_count: int = 0
    entropy_sum: np.ndarray = None
    entropy_count: int = 0
    rescues_task1: int = 0
    rescues_task2: int = 0

    def to_meta(self):
        return {
            "reward_sum": self.reward_sum,
            "episode_count": self.episode_count,
            "critic_loss_sum": self.critic_loss_sum,
            "critic_loss_count": self.critic_loss_count,
            "actor_loss_sum": self.actor_loss_sum,
            "actor_loss_count": self.actor_loss_count,
            "entropy_sum": list(self.entropy_sum),
            "entropy_count": self.entropy_count,
            "rescues_task1": self.rescues_task1,
            "rescues_task2": self.rescues_task2,
        }

    @classmethod
    def from_meta(cls, meta, heads):
        out = cls(**{k: v for k, v in meta.items() if k != "entropy_sum"})
        out.entropy_sum = np.asarray(meta["entropy_sum"], float)
        return out


# ---------------------------------------------------------------------------
# training state and loop


@dataclass
class TrainState:
    cfg: object
    critic_params: dict
    actor_params: dict
    target_params: dict
    adam_critic: Adam
    adam_actor: Adam
    buffer: ReplayBuffer
    runners: list
    trainer_rng: np.random.Generator
    episodes_done: int = 0
    env_steps: int = 0
    updates_done: int = 0
    update_baseline: int | None = None
    interval: _Interval = None
    ppo_pending: list = field(default_factory=list)


def init_state(cfg):
    seq = np.random.SeedSequence(cfg.seed)
    init_seq, trainer_seq, *worker_seqs = seq.spawn(2 + cfg.workers)
    init_rng = np.random.default_rng(init_seq)
    n_robots = 4
    critic_params = init_critic_params(
        init_rng, n_robots, OBS_DIM, N_ACTIONS, hidden=cfg.hidden_dim, heads=cfg.heads)
    actor_params = init_actor_params(
        init_rng, n_robots, OBS_DIM, N_ACTIONS, hidden=cfg.hidden_dim)
    target_params = {k: v.copy() for k, v in critic_params.items()}
    state = TrainState(
        cfg=cfg,
        critic_params=critic_params,
        actor_params=actor_params,
        target_params=target_params,
        adam_critic=Adam(cfg.lr),
        adam_actor=Adam(cfg.lr),
        buffer=ReplayBuffer(cfg.buffer_capacity, n_robots),
        runners=[EnvRunner(cfg, np.random.default_rng(s)) for s in worker_seqs],
        trainer_rng=np.random.default_rng(trainer_seq),
    )
    state.interval = _Interval(entropy_sum=np.zeros(cfg.heads))
    return state


def probe_entropy(state):
    """Attention entropy per head on the most recent buffer entries, used for
    metrics rows emitted before any critic update has run."""
    cfg = state.cfg
    size = state.buffer.size
    if size == 0:
        return np.full(cfg.heads, math.nan)
    take = min(128, size)
    idx = (np.arange(state.buffer.ptr - take, state.buffer.ptr)) % state.buffer.capacity
    n_robots = state.buffer.obs.shape[1]
    leaves = ParamLeaves(state.critic_params)
    obs_t = [Tensor(state.buffer.obs[idx][:, i]) for i in range(n_robots)]
    act_t = [Tensor(_onehot(state.buffer.actions[idx][:, i], N_ACTIONS))
             for i in range(n_robots)]
    _, alphas = critic_forward(
        leaves, obs_t, act_t, heads=cfg.heads,
        uniform_attention=(cfg.critic == "baseline"),
    )
    return _alpha_entropies(alphas, cfg.heads)


@dataclass
class TrainResult:
    cfg: object
    critic_params: dict
    actor_params: dict
    target_params: dict
    metrics: list
    metrics_path: str
    checkpoint_path: str
    episodes: int
    wall_time: float
    timings: dict


def _emit_row(state, fh, metrics):
    iv = state.interval
    cfg = state.cfg
    entropy = (iv.entropy_sum / iv.entropy_count) if iv.entropy_count else probe_entropy(state)
    record = MetricsRecord(
        episode=state.episodes_done,
        mean_reward=(iv.reward_sum / iv.episode_count) if iv.episode_count else math.nan,
        critic_loss=(iv.critic_loss_sum / iv.critic_loss_count) if iv.critic_loss_count else math.nan,
        actor_loss=(iv.actor_loss_sum / iv.actor_loss_count) if iv.actor_loss_count else math.nan,
        entropy=tuple(float(h) for h in entropy),
        rescues_task1=iv.rescues_task1,
        rescues_task2=iv.rescues_task2,
    )
    fh.write(record.csv_row() + "\n")
    fh.flush()
    metrics.append(record)
    state.interval = _Interval(entropy_sum=np.zeros(cfg.heads))


def train(cfg=None, *, resume=None, progress=False):
    """Run the full training loop; returns a TrainResult. Pass `resume` (a
    Checkpoint or a path to one) to continue a run; the stored config is used
    and the metrics file restarts from the resume point."""
    from .checkpoint import load_checkpoint, checkpoint_from_state, state_from_checkpoint

    start = time.perf_counter()
    timings = {"collect": 0.0, "critic": 0.0, "actor": 0.0}
    if resume is not None:
        ckpt = resume if not isinstance(resume, (str, Path)) else load_checkpoint(resume)
        state = state_from_checkpoint(ckpt)
        cfg = state.cfg
    else:
        if cfg is None:
            raise ContractError("train() needs a config or a checkpoint to resume")
        from .config import validate_config

        violations = validate_config(cfg)
        if violations:
            raise ContractError("invalid config: " + "; ".join(violations))
        state = init_state(cfg)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    ckpt_path = out_dir / "final.ckpt"
    metrics = []

    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    store_probs = cfg.variant == "ppo"
    min_fill = max(cfg.warmup, cfg.batch)

    next_metrics_at = (state.episodes_done // cfg.metrics_interval + 1) * cfg.metrics_interval
    next_ckpt_at = (state.episodes_done // cfg.checkpoint_interval + 1) * cfg.checkpoint_interval

    try:
        with open(metrics_path, "w") as fh:
            fh.write(METRICS_HEADER + "\n")
            while state.episodes_done < cfg.episodes:
                t0 = time.perf_counter()
                snapshot = state.actor_params
                transitions, events, finished = collect(
                    snapshot, state.runners, cfg.episode_len,
                    executor=executor, store_probs=store_probs,
                )
                timings["collect"] += time.perf_counter() - t0
                for tr in transitions:
                    state.buffer.add(tr)
                if store_probs:
                    state.ppo_pending.extend(transitions)
                state.env_steps += len(transitions)
                state.episodes_done += len(state.runners)
                iv = state.interval
                for r in finished:
                    iv.reward_sum += r
                    iv.episode_count += 1
                iv.rescues_task1 += sum(1 for e in events if e.task_type == TASK1)
                iv.rescues_task2 += sum(1 for e in events if e.task_type == TASK2)

                if state.buffer.size >= min_fill:
                    if state.update_baseline is None:
                        state.update_baseline = state.env_steps
                    due = (state.env_steps - state.update_baseline) // cfg.update_interval
                    while state.updates_done < due:
                        t0 = time.perf_counter()
                        batch = state.buffer.sample(state.trainer_rng, cfg.batch)
                        state.critic_params, closs, entropies, q_data = critic_update(
                            batch, state.critic_params, state.target_params,
                            state.actor_params, state.adam_critic, cfg,
                            state.trainer_rng, return_q=True,
                        )
                        state.target_params = soft_update_targets(
                            state.critic_params, state.target_params, cfg.tau)
                        timings["critic"] += time.perf_counter() - t0
                        iv.critic_loss_sum += closs
                        iv.critic_loss_count += 1
                        iv.entropy_sum += entropies
                        iv.entropy_count += 1
                        if cfg.variant == "td":
                            t0 = time.perf_counter()
                            state.actor_params, aloss = actor_update_td(
                                batch, state.actor_params, state.critic_params,
                                state.adam_actor, cfg, q_constants=q_data)
                            timings["actor"] += time.perf_counter() - t0
                            iv.actor_loss_sum += aloss
                            iv.actor_loss_count += 1
                        state.updates_done += 1

                if store_probs:
                    while len(state.ppo_pending) >= cfg.ppo_segment and state.buffer.size >= min_fill:
                        t0 = time.perf_counter()
                        chunk = state.ppo_pending[:cfg.ppo_segment]
                        state.ppo_pending = state.ppo_pending[cfg.ppo_segment:]
                        segment = {
                            "obs": np.stack([t.obs for t in chunk]),
                            "actions": np.stack([t.actions for t in chunk]),
                            "behavior_probs": np.stack([t.behavior_probs for t in chunk]),
                        }
                        state.actor_params, aloss = actor_update_ppo(
                            segment, state.actor_params, state.critic_params,
                            state.adam_actor, cfg)
                        timings["actor"] += time.perf_counter() - t0
                        iv.actor_loss_sum += aloss
                        iv.actor_loss_count += 1

                while state.episodes_done >= next_metrics_at:
                    _emit_row(state, fh, metrics)
                    next_metrics_at = (state.episodes_done // cfg.metrics_interval + 1) * cfg.metrics_interval
                while state.episodes_done >= next_ckpt_at:
                    from .checkpoint import save_checkpoint
                    save_checkpoint(out_dir / f"ep{state.episodes_done:07d}.ckpt",
                                    checkpoint_from_state(state))
                    next_ckpt_at = (state.episodes_done // cfg.checkpoint_interval + 1) * cfg.checkpoint_interval
                if progress and metrics:
                    last = metrics[-1]
                    print(f"episode {last.episode}: reward {last.mean_reward:.3f} "
                          f"critic_loss {last.critic_loss:.4f}", flush=True)

            if state.interval.episode_count or state.interval.critic_loss_count:
                _emit_row(state, fh, metrics)
    finally:
        if executor is not None:
            executor.shutdown()

    from .checkpoint import save_checkpoint
    save_checkpoint(ckpt_path, checkpoint_from_state(state))
    return TrainResult(
        cfg=cfg,
        critic_params=state.critic_params,
        actor_params=state.actor_params,
        target_params=state.target_params,
        metrics=metrics,
        metrics_path=str(metrics_path),
        checkpoint_path=str(ckpt_path),
        episodes=state.episodes_done,
        wall_time=time.perf_counter() - start,
        timings=timings,
    )
