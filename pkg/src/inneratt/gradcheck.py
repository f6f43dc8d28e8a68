"""Finite-difference verification of every reverse-mode gradient in the
package: the full critic graph (embeddings through attention to the action
values) and both actor losses.

Central differences with step 1e-5 on float64 are compared against the
recorded gradients element by element; elements are subsampled per parameter
array with a fixed generator so the check covers every array and stays well
under a minute.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamLeaves, Tape, Tensor
from .config import ExperimentConfig
from .critic import critic_forward, init_critic_params
from .env import N_ACTIONS, OBS_DIM
from .trainer import (_onehot, counterfactual_baselines, init_actor_params,
                      np_softmax, ppo_actor_loss, td_actor_loss)

FD_STEP = 1e-5
REL_TOLERANCE = 1e-4


def relative_error(a, b, floor=1e-5):
    return abs(a - b) / max(abs(a), abs(b), floor)


def central_difference(value_fn, arrays, name, index, h=FD_STEP):
    """d value_fn / d arrays[name][index] by central differences. value_fn
    maps a parameter dict to a float and must not mutate it."""
    perturbed = dict(arrays)
    up = arrays[name].copy()
    up[index] += h
    perturbed[name] = up
    f_up = value_fn(perturbed)
    down = arrays[name].copy()
    down[index] -= h
    perturbed[name] = down
    f_down = value_fn(perturbed)
    return (f_up - f_down) / (2.0 * h)


def compare_gradients(value_fn, grads, arrays, *, samples_per_array=8, rng=None,
                      h=FD_STEP):
    """Max relative error between recorded gradients and central differences
    over a sample of element positions in every array."""
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    worst_at = None
    for name in sorted(arrays):
        array = arrays[name]
        n = array.size
        count = min(samples_per_array, n)
        flat_choices = rng.choice(n, size=count, replace=False)
        for flat in flat_choices:
            index = np.unravel_index(int(flat), array.shape)
            fd = central_difference(value_fn, arrays, name, index, h)
            err = relative_error(grads[name][index], fd)
            if err > worst:
                worst, worst_at = err, (name, index)
    return worst, worst_at


@dataclass
class CheckResult:
    label: str
    max_rel_error: float
    worst_at: tuple
    elapsed: float

    @property
    def ok(self):
        return self.max_rel_error < REL_TOLERANCE


def _critic_case(seed, hidden, heads):
    rng = np.random.default_rng(seed)
    n_robots = 4
    params = init_critic_params(rng, n_robots, OBS_DIM, N_ACTIONS,
                                hidden=hidden, heads=heads)
    obs = rng.normal(scale=0.5, size=(n_robots, OBS_DIM))
    actions = rng.integers(0, N_ACTIONS, size=n_robots)
    onehots = _onehot(actions, N_ACTIONS)

    def loss_tensor(leaves):
        obs_t = [Tensor(obs[i][None, :]) for i in range(n_robots)]
        act_t = [Tensor(onehots[i][None, :]) for i in range(n_robots)]
        q_vectors, _ = critic_forward(leaves, obs_t, act_t, heads=heads)
        total = None
        for i in range(n_robots):
            picked = ad.tsum(q_vectors[i] * Tensor(onehots[i][None, :]))
            total = picked if total is None else total + picked
        return total

    def value_fn(arrays):
        return float(loss_tensor(ParamLeaves(arrays)).data)

    return params, loss_tensor, value_fn


def check_critic(seed=0, samples_per_array=8, hidden=128, heads=4):
    """Gradients of the summed taken-action values of the attention critic
    with respect to every critic parameter."""
    start = time.perf_counter()
    params, loss_tensor, value_fn = _critic_case(seed, hidden, heads)
    leaves = ParamLeaves(params)
    with Tape() as tape:
        loss = loss_tensor(leaves)
        ad.backward(tape, loss)
    worst, worst_at = compare_gradients(
        value_fn, leaves.grads(), params,
        samples_per_array=samples_per_array,
        rng=np.random.default_rng(seed + 1),
    )
    return CheckResult("critic", worst, worst_at, time.perf_counter() - start)


def check_actor_td(seed=0, samples_per_array=16, batch=6):
    """Gradients of the td actor loss with respect to the policy weights."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    cfg = ExperimentConfig()
    n_robots = 4
    params = init_actor_params(rng, n_robots, OBS_DIM, N_ACTIONS)
    obs = rng.normal(scale=0.5, size=(batch, n_robots, OBS_DIM))
    q_constants = [rng.normal(size=(batch, N_ACTIONS)) for _ in range(n_robots)]
    baselines = counterfactual_baselines(params, obs, q_constants)

    def value_fn(arrays):
        return float(td_actor_loss(ParamLeaves(arrays), obs, q_constants,
                                   baselines, cfg).data)

    leaves = ParamLeaves(params)
    with Tape() as tape:
        loss = td_actor_loss(leaves, obs, q_constants, baselines, cfg)
        ad.backward(tape, loss)
    worst, worst_at = compare_gradients(
        value_fn, leaves.grads(), params,
        samples_per_array=samples_per_array,
        rng=np.random.default_rng(seed + 1),
    )
    return CheckResult("actor-td", worst, worst_at, time.perf_counter() - start)


def check_actor_ppo(seed=0, samples_per_array=16, batch=6):
    """Gradients of the clipped-surrogate actor loss."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    cfg = ExperimentConfig()
    n_robots = 4
    params = init_actor_params(rng, n_robots, OBS_DIM, N_ACTIONS)
    segment = {
        "obs": rng.normal(scale=0.5, size=(batch, n_robots, OBS_DIM)),
        "actions": rng.integers(0, N_ACTIONS, size=(batch, n_robots)),
        "behavior_probs": np_softmax(rng.normal(size=(batch, n_robots, N_ACTIONS))),
    }
    advantages = rng.normal(size=(batch, n_robots))

    def value_fn(arrays):
        return float(ppo_actor_loss(ParamLeaves(arrays), segment, advantages, cfg).data)

    leaves = ParamLeaves(params)
    with Tape() as tape:
        loss = ppo_actor_loss(leaves, segment, advantages, cfg)
        ad.backward(tape, loss)
    worst, worst_at = compare_gradients(
        value_fn, leaves.grads(), params,
        samples_per_array=samples_per_array,
        rng=np.random.default_rng(seed + 1),
    )
    return CheckResult("actor-ppo", worst, worst_at, time.perf_counter() - start)


def run_full_gradcheck(seed=0, samples_per_array=8):
    """All three checks; returns (overall max relative error, results)."""
    results = [
        check_critic(seed, samples_per_array),
        check_actor_td(seed, max(samples_per_array, 16)),
        check_actor_ppo(seed, max(samples_per_array, 16)),
    ]
    return max(r.max_rel_error for r in results), results
