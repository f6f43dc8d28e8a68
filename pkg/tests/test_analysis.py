import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inneratt.analysis import (CooperationTable, attention_entropy,
                               chi_square_uniform, cooperation_rates, evaluate,
                               food_participation_split, perturbation_experiment,
                               trace_episode)
from inneratt.config import ExperimentConfig
from inneratt.critic import AttentionRecord, init_critic_params
from inneratt.env import TASK1, TASK2, RescueEvent
from inneratt.errors import ContractError
from inneratt.trainer import init_actor_params


def ev(task_type, contributors, episode=0, step=0):
    return RescueEvent(task_type=task_type, contributors=contributors,
                       episode=episode, step=step)


# ---------------------------------------------------------------------------
# cooperation rates


def test_rates_match_table_style_counts():
    events = ([ev(TASK1, (0, 3))] * 47 + [ev(TASK2, (0, 2))] * 53)
    rates = cooperation_rates(events, 0)
    assert rates == {1: 0.0, 2: 0.53, 3: 0.47}
    assert sum(rates.values()) == pytest.approx(1.0)


def test_single_event_rate_is_one():
    rates = cooperation_rates([ev(TASK1, (1, 3))], 1)
    assert rates == {0: 0.0, 2: 0.0, 3: 1.0}


def test_zero_participation_is_undefined_not_zero():
    assert cooperation_rates([ev(TASK1, (1, 3))], 0) is None


@settings(max_examples=30)
@given(st.lists(
    st.tuples(st.sampled_from([TASK1, TASK2]),
              st.sampled_from([(0, 2), (0, 3), (1, 2), (1, 3), (0, 1)])),
    min_size=1, max_size=60))
def test_rates_match_brute_force_recount(raw):
    events = [ev(t, c) for t, c in raw]
    for i in range(4):
        mine = cooperation_rates(events, i)
        participations = [e for e in events if i in e.contributors]
        if not participations:
            assert mine is None
            continue
        for j in range(4):
            if j == i:
                continue
            joint = sum(1 for e in participations if j in e.contributors)
            assert mine[j] == pytest.approx(joint / len(participations))
        assert sum(mine.values()) == pytest.approx(1.0)


def test_cooperation_table_symmetry_and_types():
    events = [ev(TASK1, (0, 3)), ev(TASK1, (1, 3)), ev(TASK2, (0, 2))]
    table = CooperationTable.from_events(events)
    assert np.array_equal(table.counts, table.counts.T)
    assert np.array_equal(np.diag(table.counts), np.zeros(4))
    assert table.per_type[TASK1][0, 3] == 1
    assert table.per_type[TASK1][1, 3] == 1
    assert table.per_type[TASK2][0, 2] == 1
    assert table.counts[0].sum() == 2


def test_food_split_counts_events_per_food_robot():
    events = [ev(TASK1, (0, 3)), ev(TASK2, (0, 2)), ev(TASK1, (1, 3))]
    assert food_participation_split(events) == (2, 1)


# ---------------------------------------------------------------------------
# chi square


def test_chi_square_balanced_is_zero():
    result = chi_square_uniform((50, 50))
    assert result.statistic == 0.0
    assert result.passes


def test_chi_square_spot_value_balanced_pass():
    result = chi_square_uniform((47, 53))
    assert result.statistic == pytest.approx(0.36, abs=1e-12)
    assert result.passes


def test_chi_square_spot_value_skewed_fail():
    # the 0.82/0.18 split at 200 rescues
    result = chi_square_uniform((164, 36))
    assert result.statistic == pytest.approx(81.92, abs=1e-12)
    assert not result.passes
    # the same rates at 100 rescues give exactly half the statistic
    assert chi_square_uniform((82, 18)).statistic == pytest.approx(40.96, abs=1e-12)


def test_chi_square_zero_total_rejected():
    with pytest.raises(ContractError):
        chi_square_uniform((0, 0))


@settings(max_examples=100)
@given(st.integers(min_value=0, max_value=10**6), st.integers(min_value=0, max_value=10**6))
def test_chi_square_swap_invariance(a, b):
    if a + b == 0:
        return
    assert chi_square_uniform((a, b)).statistic == chi_square_uniform((b, a)).statistic
    if a == b:
        assert chi_square_uniform((a, b)).statistic == 0.0


# ---------------------------------------------------------------------------
# attention entropy


def _record_from_rows(rows):
    """rows: (N, N) weight matrix replicated over 2 heads."""
    rows = np.asarray(rows, float)
    return AttentionRecord(weights=np.stack([rows, rows]))


def test_entropy_uniform_is_ln3():
    uniform = np.full((4, 4), 1.0 / 3.0)
    np.fill_diagonal(uniform, 0.0)
    record = _record_from_rows(uniform)
    assert np.allclose(attention_entropy(record, 0), np.log(3.0), atol=1e-12)


def test_entropy_one_hot_is_zero():
    w = np.zeros((4, 4))
    w[0, 1] = w[1, 0] = w[2, 3] = w[3, 2] = 1.0
    record = _record_from_rows(w)
    assert np.array_equal(attention_entropy(record, 1), np.zeros(4))


@settings(max_examples=50)
@given(st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=3, max_size=3))
def test_entropy_bounds(weights):
    w = np.asarray(weights)
    w = w / w.sum()
    row = np.zeros((4, 4))
    row[0, 1:] = w
    record = _record_from_rows(row)
    h = attention_entropy(record, 0)[0]
    assert -1e-12 <= h <= np.log(3.0) + 1e-12


# ---------------------------------------------------------------------------
# traces


@pytest.fixture(scope="module")
def tiny_setup():
    rng = np.random.default_rng(42)
    cfg = ExperimentConfig(scenario="s2", heads=4, hidden_dim=32)
    critic = init_critic_params(rng, 4, 32, 5, hidden=32, heads=4)
    actor = init_actor_params(rng, 4, hidden=32)
    return cfg, critic, actor


def test_trace_rows_normalized(tiny_setup):
    cfg, critic, actor = tiny_setup
    trace = trace_episode(actor, critic, cfg, robot=0, seed=1)
    assert len(trace.steps) == cfg.episode_len
    sums = trace.head_weights.sum(axis=2)
    assert np.allclose(sums, 1.0, atol=1e-9)


def test_trace_head_mean_is_arithmetic_mean(tiny_setup):
    cfg, critic, actor = tiny_setup
    trace = trace_episode(actor, critic, cfg, robot=2, seed=2)
    assert np.allclose(trace.head_mean(), trace.head_weights.mean(axis=1), atol=0)


def test_trace_csv_round_trip(tiny_setup, tmp_path):
    import csv

    cfg, critic, actor = tiny_setup
    trace = trace_episode(actor, critic, cfg, robot=0, seed=3)
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(trace.steps)
    mean = trace.head_mean()
    for t, row in enumerate(rows):
        for jj, j in enumerate(trace.teammates):
            assert float(row[f"mean_to_{j}"]) == pytest.approx(mean[t, jj])


# ---------------------------------------------------------------------------
# perturbation experiment


def _embedding_set(seed, samples=12, n_robots=4, hidden=32):
    return np.random.default_rng(seed).normal(size=(samples, n_robots, hidden))


def test_zero_perturbation_shifts_nothing(tiny_setup):
    _, critic, _ = tiny_setup
    report = perturbation_experiment(critic, _embedding_set(1), delta1=0.0, trials=50)
    assert report.max_abs_shift == 0.0
    assert report.bound_holds


def test_zero_key_matrix_shifts_nothing(tiny_setup):
    _, critic, _ = tiny_setup
    params = dict(critic)
    for h in range(4):
        params[f"critic.head{h}.wk"] = np.zeros_like(params[f"critic.head{h}.wk"])
    report = perturbation_experiment(params, _embedding_set(2), delta1=0.5, trials=50)
    assert report.max_abs_shift == 0.0


def test_perturbation_checks_hold_on_random_params(tiny_setup):
    _, critic, _ = tiny_setup
    report = perturbation_experiment(
        critic, _embedding_set(3), delta1=0.2, trials=300,
        rng=np.random.default_rng(7))
    assert report.max_identity_error < 1e-10
    assert report.max_locality_error == 0.0
    assert report.bound_holds
    assert report.markov_satisfied()
    assert report.trials == 300
    # informative rows exist on both sides of the bound
    bounds = [b for _, b, _ in report.eps_table]
    assert any(b < 1.0 for b in bounds) and any(b >= 1.0 for b in bounds)


def test_perturbation_requires_trials():
    with pytest.raises(ContractError):
        perturbation_experiment({}, _embedding_set(4), delta1=0.1, trials=0)


def test_report_text_and_csv(tiny_setup, tmp_path):
    _, critic, _ = tiny_setup
    report = perturbation_experiment(critic, _embedding_set(5), delta1=0.1, trials=40)
    text = report.summary_text()
    assert "spectral bound" in text and "markov_bound" in text
    path = tmp_path / "rob.csv"
    report.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "eps,markov_bound,empirical_exceedance"
    assert len(lines) == 1 + len(report.eps_table)


# ---------------------------------------------------------------------------
# evaluation harness


def test_evaluate_runs_requested_episodes(tiny_setup):
    cfg, critic, actor = tiny_setup
    result = evaluate(actor, cfg, episodes=7, seed=5)
    assert len(result.episode_rewards) == 7
    assert np.all(np.isfinite(result.episode_rewards))


def test_evaluate_deterministic_given_seed(tiny_setup):
    cfg, critic, actor = tiny_setup
    a = evaluate(actor, cfg, episodes=5, seed=9)
    b = evaluate(actor, cfg, episodes=5, seed=9)
    assert np.array_equal(a.episode_rewards, b.episode_rewards)


def test_random_policy_evaluation(tiny_setup):
    cfg, _, _ = tiny_setup
    result = evaluate(None, cfg, episodes=5, seed=11, random_policy=True)
    assert len(result.episode_rewards) == 5
