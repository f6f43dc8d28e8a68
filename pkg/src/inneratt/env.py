"""Particle rescue world: four heterogeneous robots on a 2x2 field rescue
victims of two kinds.

Task 1 victims need a Food robot and the Medicine robot inside the capture
radius on the same step; Task 2 victims need a Food robot and the
Information robot. Scenario s1 spawns one task of a random kind, s2 one of
each kind, s3 a uniform choice among {one task1, one task2, both}. In s2/s3
a rescued slot respawns (same kind, new random location) at the end of the
step so the configured task count holds at every observation point; in s1
the rescued task is gone for the rest of the episode.

Motion is a damped double integrator with per-kind speed caps, positions
hard-clamped to the field. All randomness flows through the generator given
at construction, so equal seeds and action sequences replay bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

FOOD, INFORMATION, MEDICINE = 0, 1, 2
CAPABILITY_NAMES = ("food", "information", "medicine")

TASK1, TASK2 = 0, 1
TASK_REQUIREMENTS = {TASK1: (FOOD, MEDICINE), TASK2: (FOOD, INFORMATION)}

N_ACTIONS = 5  # none, +x, -x, +y, -y
ACTION_DIRS = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])

OBS_DIM = 32
SCENARIOS = ("s1", "s2", "s3")


@dataclass(frozen=True)
class RobotSpec:
    kind: str
    max_speed: float
    mass: float
    capability: int


FOOD_DELIVERY = RobotSpec("food_delivery", 1.0, 1.0, FOOD)
NAVIGATION = RobotSpec("navigation", 1.5, 0.5, INFORMATION)
MEDICAL_ASSISTANCE = RobotSpec("medical_assistance", 1.5, 0.5, MEDICINE)

# Two food delivery robots, one navigation robot, one medical robot.
DEFAULT_TEAM = (FOOD_DELIVERY, FOOD_DELIVERY, NAVIGATION, MEDICAL_ASSISTANCE)
FOOD_ROBOTS = (0, 1)
NAVIGATION_ROBOT = 2
MEDICAL_ROBOT = 3


@dataclass
class TaskInstance:
    task_type: int
    position: np.ndarray
    active: bool = True

    @property
    def required_capabilities(self):
        return TASK_REQUIREMENTS[self.task_type]


@dataclass(frozen=True)
class RescueEvent:
    task_type: int
    contributors: tuple
    episode: int
    step: int


@dataclass(frozen=True)
class EnvParams:
    dt: float = 0.1
    damping: float = 0.25
    force: float = 5.0
    capture_radius: float = 0.15
    rescue_reward: float = 10.0
    shaping_weight: float = 0.1
    time_penalty: float = 0.01
    episode_len: int = 25


class RescueEnv:
    """One simulation instance. Single-owner: run many instances for
    parallel rollouts, each with its own generator."""

    def __init__(self, scenario, rng, params=EnvParams(), team=DEFAULT_TEAM):
        if scenario not in SCENARIOS:
            raise ContractError(f"unknown scenario {scenario!r}, expected one of {SCENARIOS}")
        self.scenario = scenario
        self.rng = rng
        self.params = params
        self.team = team
        self.n_robots = len(team)
        self.positions = np.zeros((self.n_robots, 2))
        self.velocities = np.zeros((self.n_robots, 2))
        self.tasks = [None, None]
        self.step_count = 0
        self.episode_count = -1

    # -- lifecycle ----------------------------------------------------------

    def _spawn_task(self, slot, task_type):
        self.tasks[slot] = TaskInstance(task_type, self.rng.uniform(-1.0, 1.0, size=2))

    def reset(self):
        self.episode_count += 1
        self.step_count = 0
        self.positions = self.rng.uniform(-1.0, 1.0, size=(self.n_robots, 2))
        self.velocities = np.zeros((self.n_robots, 2))
        self.tasks = [None, None]
        if self.scenario == "s1":
            self._spawn_task(0, int(self.rng.integers(2)))
        elif self.scenario == "s2":
            self._spawn_task(0, TASK1)
            self._spawn_task(1, TASK2)
        else:
            config = int(self.rng.integers(3))
            if config == 0:
                self._spawn_task(0, TASK1)
            elif config == 1:
                self._spawn_task(0, TASK2)
            else:
                self._spawn_task(0, TASK1)
                self._spawn_task(1, TASK2)
        return self.observe_all()

    def active_tasks(self):
        return [(slot, t) for slot, t in enumerate(self.tasks) if t is not None and t.active]

    # -- dynamics -----------------------------------------------------------

    def step(self, actions):
        """Advance one step. Returns (observations, rewards, events, done)."""
        actions = np.asarray(actions)
        if actions.shape != (self.n_robots,) or np.any(actions < 0) or np.any(actions >= N_ACTIONS):
            raise ContractError(
                f"need one action in [0,{N_ACTIONS}) per robot, got {actions!r}"
            )
        p = self.params
        for i, spec in enumerate(self.team):
            accel = p.force * ACTION_DIRS[actions[i]] / spec.mass
            v = (1.0 - p.damping) * self.velocities[i] + accel * p.dt
            speed_sq = v @ v
            if speed_sq > spec.max_speed**2:
                v = v * (spec.max_speed / np.sqrt(speed_sq))
                if v @ v > spec.max_speed**2:  # guard the cap against roundoff
                    v = v * (1.0 - 1e-13)
            self.velocities[i] = v
            self.positions[i] = np.clip(self.positions[i] + v * p.dt, -1.0, 1.0)

        events = self.capture_check()
        rewards = self._rewards(events)

        for event, slot in zip(events, self._last_captured_slots):
            if self.scenario in ("s2", "s3"):
                self._spawn_task(slot, event.task_type)
            else:
                self.tasks[slot] = None

        self.step_count += 1
        done = self.step_count >= p.episode_len
        return self.observe_all(), rewards, events, done

    def _nearest_with_capability(self, capability, position):
        best, best_dist = None, np.inf
        for i, spec in enumerate(self.team):
            if spec.capability != capability:
                continue
            dist = float(np.linalg.norm(self.positions[i] - position))
            if dist < best_dist:  # strict: ties keep the lower index
                best, best_dist = i, dist
        return best, best_dist

    def capture_check(self):
        """Tasks whose every required capability has a robot in radius are
        rescued; contributors are the nearest robot per capability. Rescued
        tasks are deactivated here, respawn is the caller's concern."""
        events = []
        self._last_captured_slots = []
        for slot, task in self.active_tasks():
            contributors = []
            for capability in task.required_capabilities:
                i, dist = self._nearest_with_capability(capability, task.position)
                if i is None or dist > self.params.capture_radius:
                    contributors = None
                    break
                contributors.append(i)
            if contributors is not None:
                task.active = False
                events.append(RescueEvent(
                    task_type=task.task_type,
                    contributors=tuple(contributors),
                    episode=self.episode_count,
                    step=self.step_count,
                ))
                self._last_captured_slots.append(slot)
        return events

    def _rewards(self, events):
        p = self.params
        shaping = 0.0
        for _, task in self.active_tasks():
            for capability in task.required_capabilities:
                i, dist = self._nearest_with_capability(capability, task.position)
                if i is not None and dist > p.capture_radius:  # capability not yet met
                    shaping += dist
        rewards = np.full(self.n_robots, -p.time_penalty - p.shaping_weight * shaping)
        for event in events:
            for i in event.contributors:
                rewards[i] += p.rescue_reward
        return rewards

    # -- observations -------------------------------------------------------

    def observe(self, i):
        """Fixed 32-length encoding: own velocity, own position, own
        capability one-hot, then per teammate (relative position, capability
        one-hot), then per task slot (presence, relative position, kind
        one-hot); empty slots are zero-filled."""
        if i < 0 or i >= self.n_robots:
            raise ContractError(f"robot index {i} out of range")
        out = np.zeros(OBS_DIM)
        out[0:2] = self.velocities[i]
        out[2:4] = self.positions[i]
        out[4 + self.team[i].capability] = 1.0
        offset = 7
        for j in range(self.n_robots):
            if j == i:
                continue
            out[offset:offset + 2] = self.positions[j] - self.positions[i]
            out[offset + 2 + self.team[j].capability] = 1.0
            offset += 5
        for slot in range(2):
            task = self.tasks[slot]
            if task is not None and task.active:
                out[offset] = 1.0
                out[offset + 1:offset + 3] = task.position - self.positions[i]
                out[offset + 3 + task.task_type] = 1.0
            offset += 5
        return out

    def observe_all(self):
        return [self.observe(i) for i in range(self.n_robots)]


def write_trajectory_csv(path, rows):
    """Dump trajectory rows (one per step) as CSV: episode, step, per-robot
    x/y/vx/vy/action/reward, and per-slot event flags."""
    import csv

    n = (len(rows[0]) - 4) // 6 if rows else 4
    header = ["episode", "step"]
    for i in range(n):
        header += [f"x{i}", f"y{i}", f"vx{i}", f"vy{i}", f"action{i}", f"reward{i}"]
    header += ["event_task1", "event_task2"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def trajectory_row(env, actions, rewards, events):
    row = [env.episode_count, env.step_count]
    for i in range(env.n_robots):
        row += [
            env.positions[i][0], env.positions[i][1],
            env.velocities[i][0], env.velocities[i][1],
            int(actions[i]), rewards[i],
        ]
    row += [
        sum(1 for e in events if e.task_type == TASK1),
        sum(1 for e in events if e.task_type == TASK2),
    ]
    return row
