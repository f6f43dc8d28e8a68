"""Evaluation machinery: greedy rollouts, cooperation statistics with the
chi-square uniformity test, attention entropy and traces, and the empirical
verification of the attention score perturbation bounds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import env as rescue
from .critic import critic_dims, q_values
from .env import N_ACTIONS, RescueEnv, TASK1, TASK2
from .errors import ContractError
from .trainer import policy_probs

CHI2_CRITICAL_1DF = 3.84  # 5% tail of chi-square with one degree of freedom


# ---------------------------------------------------------------------------
# evaluation rollouts


@dataclass
class EvalResult:
    episode_rewards: np.ndarray
    events: list

    @property
    def mean_reward(self):
        return float(self.episode_rewards.mean())

    @property
    def stderr(self):
        n = len(self.episode_rewards)
        return float(self.episode_rewards.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf


def evaluate(actor_params, cfg, *, episodes=None, seed=0, greedy=True,
             random_policy=False, trajectory_path=None):
    """Roll out evaluation episodes (greedy argmax actions by default) and
    return per-episode mean-over-robots returns plus all rescue events.
    With trajectory_path, every step is also dumped as a CSV row."""
    episodes = cfg.eval_episodes if episodes is None else episodes
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE7A1)))
    env = RescueEnv(cfg.scenario, rng, cfg.env_params())
    rewards = np.zeros(episodes)
    events = []
    trajectory = [] if trajectory_path else None
    for ep in range(episodes):
        obs = env.reset()
        done = False
        total = 0.0
        while not done:
            if random_policy:
                actions = rng.integers(0, N_ACTIONS, size=env.n_robots)
            else:
                actions = []
                for i in range(env.n_robots):
                    p = policy_probs(actor_params, i, obs[i])
                    actions.append(int(p.argmax()) if greedy else
                                   int(rng.choice(N_ACTIONS, p=p)))
            actions = np.asarray(actions)
            obs, r, evs, done = env.step(actions)
            events.extend(evs)
            total += float(r.mean())
            if trajectory is not None:
                trajectory.append(rescue.trajectory_row(env, actions, r, evs))
        rewards[ep] = total
    if trajectory is not None:
        rescue.write_trajectory_csv(trajectory_path, trajectory)
    return EvalResult(episode_rewards=rewards, events=events)


# ---------------------------------------------------------------------------
# cooperation statistics


@dataclass
class CooperationTable:
    counts: np.ndarray            # (N, N) symmetric, zero diagonal
    per_type: dict                # task_type -> (N, N)

    @classmethod
    def from_events(cls, events, n_robots=4):
        counts = np.zeros((n_robots, n_robots), dtype=int)
        per_type = {TASK1: np.zeros((n_robots, n_robots), dtype=int),
                    TASK2: np.zeros((n_robots, n_robots), dtype=int)}
        for event in events:
            contributors = sorted(set(event.contributors))
            for a_idx, a in enumerate(contributors):
                for b in contributors[a_idx + 1:]:
                    counts[a, b] += 1
                    counts[b, a] += 1
                    per_type[event.task_type][a, b] += 1
                    per_type[event.task_type][b, a] += 1
        return cls(counts=counts, per_type=per_type)


def cooperation_rates(events, i, n_robots=4):
    """Fraction of robot i's rescues shared with each teammate j. Returns a
    dict over teammates, or None when robot i never participated (the rate is
    undefined, not zero)."""
    table = CooperationTable.from_events(events, n_robots)
    total = table.counts[i].sum()
    if total == 0:
        return None
    return {j: table.counts[i, j] / total for j in range(n_robots) if j != i}


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    passes: bool  # True when the split is consistent with uniform at 5%


def chi_square_uniform(counts):
    """Pearson chi-square of a two-category count split against the uniform
    expectation (total/2 per category), tested at the 3.84 critical value."""
    counts = np.asarray(counts, float)
    if counts.shape != (2,):
        raise ContractError(f"expected exactly 2 category counts, got {counts.shape}")
    total = counts.sum()
    if total <= 0:
        raise ContractError("chi-square of an empty count split is undefined")
    expected = total / 2.0
    statistic = float(((counts - expected) ** 2 / expected).sum())
    return ChiSquareResult(statistic=statistic, passes=statistic < CHI2_CRITICAL_1DF)


def food_participation_split(events, food_robots=rescue.FOOD_ROBOTS):
    """How many rescue events each food delivery robot contributed to."""
    counts = [0, 0]
    for event in events:
        for slot, robot in enumerate(food_robots):
            if robot in event.contributors:
                counts[slot] += 1
    return tuple(counts)


# ---------------------------------------------------------------------------
# attention inspection


def attention_entropy(record, head):
    """Shannon entropy (natural log) of each robot's attention distribution
    for one head of a record."""
    return record.entropy(head)


@dataclass
class TraceResult:
    robot: int
    steps: list          # step indices
    head_weights: np.ndarray  # (T, heads, N-1) over teammates in index order
    teammates: tuple
    captures: list = field(default_factory=list)  # (step, task_type)

    def head_mean(self):
        return self.head_weights.mean(axis=1)  # (T, N-1)

    def write_csv(self, path):
        heads = self.head_weights.shape[1]
        header = ["step"]
        for h in range(heads):
            header += [f"h{h}_to_{j}" for j in self.teammates]
        header += [f"mean_to_{j}" for j in self.teammates]
        mean = self.head_mean()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t, step in enumerate(self.steps):
                row = [step]
                for h in range(heads):
                    row += list(self.head_weights[t, h])
                row += list(mean[t])
                writer.writerow(row)


def trace_episode(actor_params, critic_params, cfg, robot, *, seed=0,
                  action_script=None, env_setup=None):
    """Roll one evaluation episode and log the chosen robot's per-step,
    per-head attention over its teammates.

    `action_script(env, step) -> actions` overrides the greedy policy and
    `env_setup(env)` may re-place robots and tasks after reset; both hooks
    exist so staged teaming scenarios can be replayed exactly.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7ACE)))
    env = RescueEnv(cfg.scenario, rng, cfg.env_params())
    obs = env.reset()
    if env_setup is not None:
        env_setup(env)
        obs = env.observe_all()
    n = env.n_robots
    teammates = tuple(j for j in range(n) if j != robot)
    steps, weights, captures = [], [], []
    done = False
    step = 0
    while not done:
        if action_script is not None:
            actions = np.asarray(action_script(env, step))
        else:
            actions = np.asarray([int(policy_probs(actor_params, i, obs[i]).argmax())
                                  for i in range(n)])
        _, record = q_values(critic_params, np.asarray(obs), actions, robot)
        weights.append(record.weights[:, robot, list(teammates)])
        steps.append(step)
        obs, _, events, done = env.step(actions)
        captures.extend((step, e.task_type) for e in events)
        step += 1
    return TraceResult(robot=robot, steps=steps,
                       head_weights=np.stack(weights), teammates=teammates,
                       captures=captures)


def scripted_handoff_trace(critic_params, cfg, *, monitored=1, seed=0):
    """Staged double-task episode mirroring the adaptive-teaming storyline:
    the monitored food delivery robot converges on the task-1 victim together
    with the medical robot, rescues it, then crosses the field to rescue the
    task-2 victim with the navigation robot; the other food robot idles in a
    far corner. The script switches stages the step after the first rescue.
    Returns (trace, switch step index)."""
    food = monitored
    other_food = 1 - monitored
    nav, med = rescue.NAVIGATION_ROBOT, rescue.MEDICAL_ROBOT
    task1_at = np.array([-0.60, 0.0])
    task2_at = np.array([0.60, 0.0])
    stage = {"switched_at": None}

    def setup(env):
        env.positions[food] = [-0.60, 0.45]
        env.positions[other_food] = [-0.05, 0.95]
        env.positions[nav] = [0.60, 0.30]
        env.positions[med] = [-0.60, -0.45]
        env.velocities[:] = 0.0
        env.tasks[0].position = task1_at.copy()
        env.tasks[1].position = task2_at.copy()

    def toward(env, i, target):
        delta = target - env.positions[i]
        if np.abs(delta).max() < 0.03:
            return 0
        axis = int(np.argmax(np.abs(delta)))
        if axis == 0:
            return 1 if delta[0] > 0 else 2
        return 3 if delta[1] > 0 else 4

    def task1_rescued(env):
        # the slot respawns elsewhere after the rescue, so "no active task-1
        # at the staged position" marks the transition
        for _, task in env.active_tasks():
            if task.task_type == rescue.TASK1 and np.allclose(task.position, task1_at):
                return False
        return True

    def script(env, step):
        if stage["switched_at"] is None and task1_rescued(env):
            stage["switched_at"] = step
        actions = np.zeros(env.n_robots, dtype=int)
        if stage["switched_at"] is None:
            actions[food] = toward(env, food, task1_at)
            actions[med] = toward(env, med, task1_at)
            actions[nav] = toward(env, nav, task2_at + [0.0, 0.25])
        else:
            actions[food] = toward(env, food, task2_at)
            actions[nav] = toward(env, nav, task2_at)
            actions[med] = toward(env, med, task1_at + [0.0, -0.25])
        return actions

    trace = trace_episode(None, critic_params, cfg, food, seed=seed,
                          action_script=script, env_setup=setup)
    switch_step = stage["switched_at"] if stage["switched_at"] is not None else len(trace.steps)
    return trace, switch_step


# ---------------------------------------------------------------------------
# perturbation robustness


@dataclass
class RobustnessReport:
    delta1: float
    delta2: float
    spectral_bound: float        # max over heads of |wq|_2 |wk|_2 * d1 * d2
    trials: int
    max_abs_shift: float
    max_identity_error: float    # |recomputed - predicted| on the perturbed key
    max_locality_error: float    # drift of scores whose key was untouched
    max_query_side_shift: float  # reported, not bounded: row j's own scores
    eps_table: list = field(default_factory=list)  # (eps, markov_bound, empirical)
    bound_violations: int = 0

    @property
    def bound_holds(self):
        return self.bound_violations == 0

    def markov_satisfied(self):
        return all(emp <= bound for _, bound, emp in self.eps_table if bound < 1.0)

    def summary_text(self):
        lines = [
            f"perturbation robustness over {self.trials} trials",
            f"  delta1 (perturbation norm cap) : {self.delta1:.6g}",
            f"  delta2 (max embedding norm)    : {self.delta2:.6g}",
            f"  spectral bound |wq||wk|d1d2    : {self.spectral_bound:.6g}",
            f"  max |dS| observed              : {self.max_abs_shift:.6g}",
            f"  max identity error             : {self.max_identity_error:.3g}",
            f"  max locality error             : {self.max_locality_error:.3g}",
            f"  max query-side shift (info)    : {self.max_query_side_shift:.6g}",
            f"  deterministic bound violations : {self.bound_violations}",
            "  eps        markov_bound  empirical",
        ]
        for eps, bound, emp in self.eps_table:
            note = "" if bound < 1.0 else "  (uninformative)"
            lines.append(f"  {eps:<10.4g} {bound:<13.4g} {emp:.4g}{note}")
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["eps", "markov_bound", "empirical_exceedance"])
            for eps, bound, emp in self.eps_table:
                writer.writerow([eps, bound, emp])


def _spectral_norm(m):
    return float(np.linalg.svd(m, compute_uv=False)[0])


def _ball_sample(rng, dim, radius):
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    return direction * radius * rng.random() ** (1.0 / dim)


def perturbation_experiment(critic_params, embeddings, delta1, trials, *,
                            rng=None, eps_grid=None, prefix="critic"):
    """Perturb one robot's embedding per trial and compare the recomputed
    attention scores against the predicted single-term increment, the
    deterministic spectral bound, and the Markov exceedance bound.

    `embeddings` is an (S, N, hidden) stack of joint embedding samples; the
    embedding norm cap delta2 is taken as the max norm observed in it.
    """
    if trials < 1:
        raise ContractError("need at least one trial")
    rng = np.random.default_rng(0) if rng is None else rng
    embeddings = np.asarray(embeddings, float)
    n_samples, n_robots, hidden = embeddings.shape
    heads = sum(1 for k in critic_params
                if k.startswith(f"{prefix}.head") and k.endswith(".wq"))
    delta2 = float(np.linalg.norm(embeddings, axis=2).max())
    head_bounds = []
    for h in range(heads):
        wq = critic_params[f"{prefix}.head{h}.wq"]
        wk = critic_params[f"{prefix}.head{h}.wk"]
        head_bounds.append(_spectral_norm(wq) * _spectral_norm(wk) * delta1 * delta2)
    overall_bound = max(head_bounds)

    shifts = []
    max_identity_err = 0.0
    max_locality_err = 0.0
    max_query_shift = 0.0
    violations = 0
    for _ in range(trials):
        e = embeddings[rng.integers(n_samples)]
        h = int(rng.integers(heads))
        j = int(rng.integers(n_robots))
        wq = critic_params[f"{prefix}.head{h}.wq"]
        wk = critic_params[f"{prefix}.head{h}.wk"]
        delta_e = _ball_sample(rng, hidden, delta1)
        keys = e @ wk
        keys_after = (e + np.where(np.arange(n_robots)[:, None] == j, delta_e, 0.0)) @ wk
        predicted_term = (delta_e @ wk)
        for i in range(n_robots):
            if i == j:
                continue
            q_i = e[i] @ wq
            before = keys @ q_i           # scores S_i* over all keys
            after = keys_after @ q_i
            shift = after[j] - before[j]
            shifts.append(abs(shift))
            max_identity_err = max(max_identity_err, abs(shift - predicted_term @ q_i))
            others = [k for k in range(n_robots) if k != j]
            max_locality_err = max(max_locality_err, float(np.abs(after[others] - before[others]).max()))
            if abs(shift) > head_bounds[h]:
                violations += 1
        # query side of the perturbed robot, logged for completeness
        qj_before = e[j] @ wq
        qj_after = (e[j] + delta_e) @ wq
        query_shift = np.abs(keys @ qj_after - keys @ qj_before)
        query_shift[j] = 0.0
        max_query_shift = max(max_query_shift, float(query_shift.max()))

    shifts = np.asarray(shifts)
    if eps_grid is None:
        eps_grid = [overall_bound * f for f in (0.25, 0.5, 1.0, 1.5, 2.0)]
    eps_table = []
    for eps in eps_grid:
        bound = overall_bound / eps if eps > 0 else math.inf
        empirical = float((shifts >= eps).mean())
        eps_table.append((float(eps), float(bound), empirical))

    return RobustnessReport(
        delta1=delta1,
        delta2=delta2,
        spectral_bound=overall_bound,
        trials=trials,
        max_abs_shift=float(shifts.max()),
        max_identity_error=max_identity_err,
        max_locality_error=max_locality_err,
        max_query_side_shift=max_query_shift,
        eps_table=eps_table,
        bound_violations=violations,
    )


def sample_embeddings(actor_params, critic_params, cfg, *, episodes=4, seed=0):
    """Collect joint embedding samples from greedy rollouts of a trained
    policy, for use as the perturbation experiment's evaluation set."""
    from .critic import embed

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5A11)))
    env = RescueEnv(cfg.scenario, rng, cfg.env_params())
    _, _, n_actions, hidden, _ = critic_dims(critic_params)
    samples = []
    for _ in range(episodes):
        obs = env.reset()
        done = False
        while not done:
            actions = np.asarray([int(policy_probs(actor_params, i, obs[i]).argmax())
                                  for i in range(env.n_robots)])
            onehots = np.zeros((env.n_robots, n_actions))
            onehots[np.arange(env.n_robots), actions] = 1.0
            joint = np.stack([embed(critic_params, i, obs[i], onehots[i])
                              for i in range(env.n_robots)])
            samples.append(joint)
            obs, _, _, done = env.step(actions)
    return np.stack(samples)
