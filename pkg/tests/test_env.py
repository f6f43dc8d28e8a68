import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inneratt.env import (DEFAULT_TEAM, FOOD, INFORMATION, MEDICINE, OBS_DIM,
                          TASK1, TASK2, EnvParams, RescueEnv, TaskInstance)
from inneratt.errors import ContractError


def make_env(scenario="s1", seed=0, **param_overrides):
    params = EnvParams(**param_overrides) if param_overrides else EnvParams()
    return RescueEnv(scenario, np.random.default_rng(seed), params)


def place(env, positions):
    env.positions[:] = np.asarray(positions, float)
    env.velocities[:] = 0.0


# ---------------------------------------------------------------------------
# reset and scenarios


def test_s1_reset_spawns_one_task():
    env = make_env("s1")
    for _ in range(20):
        env.reset()
        active = env.active_tasks()
        assert len(active) == 1


def test_s2_reset_spawns_one_of_each():
    env = make_env("s2")
    for _ in range(20):
        env.reset()
        types = sorted(t.task_type for _, t in env.active_tasks())
        assert types == [TASK1, TASK2]


def test_s3_reset_configuration_frequencies():
    """Uniform choice over three configurations: each lands in [0.25, 0.42]
    over 1000 resets, and exactly the three configurations appear."""
    env = make_env("s3", seed=123)
    counts = {("t1",): 0, ("t2",): 0, ("t1", "t2"): 0}
    for _ in range(1000):
        env.reset()
        tasks = env.active_tasks()
        key = tuple(sorted("t1" if t.task_type == TASK1 else "t2" for _, t in tasks))
        counts[key] += 1
        assert len(tasks) in (1, 2)
    for key, count in counts.items():
        assert 0.25 <= count / 1000 <= 0.42, (key, count)


def test_unknown_scenario_rejected():
    with pytest.raises(ContractError):
        RescueEnv("s4", np.random.default_rng(0))


def test_robot_specs_match_roster():
    kinds = [spec.capability for spec in DEFAULT_TEAM]
    assert kinds == [FOOD, FOOD, INFORMATION, MEDICINE]
    assert [s.max_speed for s in DEFAULT_TEAM] == [1.0, 1.0, 1.5, 1.5]
    assert [s.mass for s in DEFAULT_TEAM] == [1.0, 1.0, 0.5, 0.5]


def test_task_requirements():
    assert TaskInstance(TASK1, np.zeros(2)).required_capabilities == (FOOD, MEDICINE)
    assert TaskInstance(TASK2, np.zeros(2)).required_capabilities == (FOOD, INFORMATION)


# ---------------------------------------------------------------------------
# physics


def test_zero_action_from_rest_stays_put():
    env = make_env("s1")
    env.reset()
    place(env, [[0.2, 0.2], [-0.2, -0.2], [0.5, -0.5], [-0.5, 0.5]])
    before = env.positions.copy()
    env.step(np.zeros(4, dtype=int))
    assert np.array_equal(env.positions, before)
    assert np.array_equal(env.velocities, np.zeros((4, 2)))


def test_speed_caps_under_constant_push():
    env = make_env("s2")
    env.reset()
    place(env, np.zeros((4, 2)))
    for _ in range(60):
        env.step(np.ones(4, dtype=int))  # constant +x force
        speeds = np.linalg.norm(env.velocities, axis=1)
        for i, spec in enumerate(env.team):
            assert speeds[i] <= spec.max_speed
    # the caps are actually approached
    speeds = np.linalg.norm(env.velocities, axis=1)
    assert speeds[0] == pytest.approx(1.0, abs=1e-9)
    assert speeds[2] == pytest.approx(1.5, abs=1e-9)


def test_invalid_action_rejected():
    env = make_env("s1")
    env.reset()
    with pytest.raises(ContractError):
        env.step(np.array([0, 1, 2, 5]))
    with pytest.raises(ContractError):
        env.step(np.array([0, 1, 2]))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10**6), st.integers(min_value=1, max_value=200))
def test_containment_and_caps_fuzz(seed, steps):
    env = make_env("s3", seed=seed)
    env.reset()
    arng = np.random.default_rng(seed + 1)
    for _ in range(steps):
        env.step(arng.integers(0, 5, size=4))
        assert np.all(np.abs(env.positions) <= 1.0)
        for i, spec in enumerate(env.team):
            assert env.velocities[i] @ env.velocities[i] <= spec.max_speed**2


def test_deterministic_replay_bit_identical():
    trajs = []
    for _ in range(2):
        env = make_env("s3", seed=99)
        env.reset()
        arng = np.random.default_rng(5)
        log = []
        for _ in range(100):
            obs, r, evs, done = env.step(arng.integers(0, 5, size=4))
            log.append((np.concatenate(obs).copy(), r.copy()))
            if done:
                env.reset()
        trajs.append(log)
    for (o1, r1), (o2, r2) in zip(*trajs):
        assert np.array_equal(o1, o2)
        assert np.array_equal(r1, r2)


# ---------------------------------------------------------------------------
# capture and rewards


def _single_task_env(task_type, position):
    env = make_env("s1")
    env.reset()
    env.tasks[0] = TaskInstance(task_type, np.asarray(position, float))
    env.tasks[1] = None
    return env


def test_partial_coverage_no_event():
    env = _single_task_env(TASK1, [0.0, 0.0])
    place(env, [[0.05, 0.0], [0.9, 0.9], [0.9, -0.9], [-0.9, 0.9]])  # food only
    assert env.capture_check() == []
    assert env.tasks[0].active


def test_full_coverage_fires_event_with_contributors():
    env = _single_task_env(TASK1, [0.0, 0.0])
    place(env, [[0.05, 0.0], [0.9, 0.9], [0.9, -0.9], [-0.05, 0.0]])
    events = env.capture_check()
    assert len(events) == 1
    assert events[0].task_type == TASK1
    assert events[0].contributors == (0, 3)
    assert not env.tasks[0].active


def test_nearest_food_robot_is_credited():
    env = _single_task_env(TASK1, [0.0, 0.0])
    place(env, [[0.10, 0.0], [0.05, 0.0], [0.9, -0.9], [-0.05, 0.0]])
    events = env.capture_check()
    assert events[0].contributors == (1, 3)


def test_exact_tie_keeps_lower_index():
    env = _single_task_env(TASK2, [0.0, 0.0])
    place(env, [[0.1, 0.0], [-0.1, 0.0], [0.0, 0.1], [0.9, 0.9]])
    events = env.capture_check()
    assert events[0].contributors == (0, 2)


def test_rescue_reward_goes_to_contributors():
    env = _single_task_env(TASK1, [0.0, 0.0])
    p = env.params
    place(env, [[0.04, 0.0], [0.9, 0.9], [0.9, -0.9], [-0.04, 0.0]])
    _, rewards, events, _ = env.step(np.zeros(4, dtype=int))
    assert len(events) == 1
    base = rewards[1]  # non-contributor: time penalty + shaping only
    assert rewards[0] == pytest.approx(base + p.rescue_reward)
    assert rewards[3] == pytest.approx(base + p.rescue_reward)


def test_time_penalty_only_when_no_tasks():
    env = make_env("s1")
    env.reset()
    env.tasks = [None, None]
    place(env, [[0.2, 0.2], [-0.2, -0.2], [0.5, -0.5], [-0.5, 0.5]])
    _, rewards, _, _ = env.step(np.zeros(4, dtype=int))
    assert np.allclose(rewards, -env.params.time_penalty)


def test_shaping_matches_hand_computation():
    env = _single_task_env(TASK1, [0.0, 0.0])
    place(env, [[0.5, 0.0], [0.9, 0.9], [0.9, -0.9], [0.0, 0.4]])
    _, rewards, _, _ = env.step(np.zeros(4, dtype=int))
    p = env.params
    expected = -p.time_penalty - p.shaping_weight * (0.5 + 0.4)
    assert np.allclose(rewards, expected)


def test_s1_task_does_not_respawn():
    env = _single_task_env(TASK1, [0.0, 0.0])
    place(env, [[0.04, 0.0], [0.9, 0.9], [0.9, -0.9], [-0.04, 0.0]])
    _, _, events, _ = env.step(np.zeros(4, dtype=int))
    assert len(events) == 1
    assert env.active_tasks() == []


def test_s2_respawns_same_type_by_next_step():
    env = make_env("s2", seed=17)
    env.reset()
    env.tasks[0].position = np.array([0.0, 0.0])
    place(env, [[0.04, 0.0], [0.9, 0.9], [0.9, -0.9], [-0.04, 0.0]])
    _, _, events, _ = env.step(np.zeros(4, dtype=int))
    assert [e.task_type for e in events] == [TASK1]
    types = sorted(t.task_type for _, t in env.active_tasks())
    assert types == [TASK1, TASK2]  # slot refilled with the same kind


def test_scenario_cardinality_under_play():
    for scenario, allowed in (("s2", {2}), ("s3", {1, 2})):
        env = make_env(scenario, seed=3)
        env.reset()
        expected = len(env.active_tasks())
        arng = np.random.default_rng(4)
        for _ in range(500):
            _, _, _, done = env.step(arng.integers(0, 5, size=4))
            count = len(env.active_tasks())
            assert count in allowed
            if scenario == "s3":
                assert count == expected  # respawn preserves the configuration
            if done:
                env.reset()
                expected = len(env.active_tasks())


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_event_contributors_cover_requirements(seed):
    env = make_env("s3", seed=seed)
    env.reset()
    arng = np.random.default_rng(seed ^ 0xBEEF)
    for _ in range(120):
        _, _, events, done = env.step(arng.integers(0, 5, size=4))
        for event in events:
            held = {env.team[i].capability for i in event.contributors}
            from inneratt.env import TASK_REQUIREMENTS
            assert set(TASK_REQUIREMENTS[event.task_type]) <= held
            for i in event.contributors:
                dist = np.linalg.norm(env.positions[i] - np.asarray(
                    [t.position for _, t in env.active_tasks()] + [env.positions[i]])[0])
        if done:
            env.reset()


# ---------------------------------------------------------------------------
# observations


def test_observation_length_always_32():
    env = make_env("s3", seed=8)
    env.reset()
    arng = np.random.default_rng(9)
    for _ in range(50):
        obs, _, _, done = env.step(arng.integers(0, 5, size=4))
        assert all(len(o) == OBS_DIM for o in obs)
        if done:
            env.reset()


def test_observation_center_no_tasks():
    env = make_env("s1")
    env.reset()
    env.tasks = [None, None]
    place(env, np.zeros((4, 2)))
    obs = env.observe(0)
    assert np.array_equal(obs[0:4], np.zeros(4))       # velocity, position
    assert np.array_equal(obs[4:7], [1, 0, 0])          # food capability
    assert np.array_equal(obs[7:22], np.tile([0, 0, 0, 0, 0], 3) + np.array(
        [0, 0, 1, 0, 0] * 1 + [0, 0, 0, 1, 0] + [0, 0, 0, 0, 1]))
    assert np.array_equal(obs[22:], np.zeros(10))       # empty task slots


def test_observation_relative_positions_hand_oracle():
    env = make_env("s2")
    env.reset()
    place(env, [[0.1, 0.2], [-0.3, 0.4], [0.5, -0.6], [0.7, 0.8]])
    env.tasks[0].position = np.array([0.0, 0.0])
    env.tasks[1].position = np.array([0.5, 0.5])
    obs = env.observe(1)
    assert np.allclose(obs[2:4], [-0.3, 0.4])
    assert np.allclose(obs[7:9], [0.4, -0.2])      # robot 0 relative
    assert np.allclose(obs[12:14], [0.8, -1.0])    # robot 2 relative
    assert np.allclose(obs[17:19], [1.0, 0.4])     # robot 3 relative
    assert obs[22] == 1.0
    assert np.allclose(obs[23:25], [0.3, -0.4])    # task 1 relative
    assert np.array_equal(obs[25:27], [1, 0])
    assert obs[27] == 1.0
    assert np.allclose(obs[28:30], [0.8, 0.1])     # task 2 relative
    assert np.array_equal(obs[30:32], [0, 1])


def test_observe_index_out_of_range():
    env = make_env("s1")
    env.reset()
    with pytest.raises(ContractError):
        env.observe(4)


def test_trajectory_csv_dump(tmp_path):
    import csv

    from inneratt.env import trajectory_row, write_trajectory_csv

    env = make_env("s2", seed=31)
    env.reset()
    arng = np.random.default_rng(32)
    rows = []
    for _ in range(10):
        actions = arng.integers(0, 5, size=4)
        _, rewards, events, _ = env.step(actions)
        rows.append(trajectory_row(env, actions, rewards, events))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, rows)
    with open(path, newline="") as fh:
        read = list(csv.DictReader(fh))
    assert len(read) == 10
    assert {"episode", "step", "x0", "vy3", "action2", "reward1",
            "event_task1", "event_task2"} <= set(read[0])
    assert float(read[3]["x0"]) == pytest.approx(rows[3][2])
