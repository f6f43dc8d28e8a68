"""Centralized attention critic.

Each robot's Q-network embeds every robot's (observation, action) pair,
scores teammates with per-head query/key dot products, and mixes teammates'
value vectors by the resulting softmax weights. A fixed-weight variant
replaces the learned weights with uniform 1/(N-1) mixing while sharing the
exact same parameters, so the two critics are directly comparable.

The Q head returns a vector over the queried robot's own candidate actions
(teammates' actions held fixed). To keep every entry of that vector a
well-defined action value, the queried robot's own embedding is computed
with a zeroed action encoding; teammates' embeddings carry their taken
actions. Indexing the vector at the taken action gives the joint-action
Q value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamLeaves, Tensor
from .errors import ContractError


def init_critic_params(rng, n_robots, obs_dim, n_actions, hidden=128, heads=4,
                       prefix="critic"):
    """Fresh parameter dict. Per-robot embedding and output networks; the
    per-head query/key/value projections are shared across robots."""
    if hidden % heads != 0:
        raise ContractError(f"hidden={hidden} must be divisible by heads={heads}")
    head_dim = hidden // heads
    in_dim = obs_dim + n_actions
    params = {}
    for i in range(n_robots):
        params[f"{prefix}.embed{i}.w1"] = ad.uniform_init(rng, (in_dim, hidden), in_dim)
        params[f"{prefix}.embed{i}.b1"] = ad.uniform_init(rng, (hidden,), in_dim)
        params[f"{prefix}.embed{i}.w2"] = ad.uniform_init(rng, (hidden, hidden), hidden)
        params[f"{prefix}.embed{i}.b2"] = ad.uniform_init(rng, (hidden,), hidden)
    for h in range(heads):
        params[f"{prefix}.head{h}.wq"] = ad.uniform_init(rng, (hidden, head_dim), hidden)
        params[f"{prefix}.head{h}.wk"] = ad.uniform_init(rng, (hidden, head_dim), hidden)
        params[f"{prefix}.head{h}.wv"] = ad.uniform_init(rng, (hidden, head_dim), hidden)
    for i in range(n_robots):
        params[f"{prefix}.out{i}.w1"] = ad.uniform_init(rng, (2 * hidden, hidden), 2 * hidden)
        params[f"{prefix}.out{i}.b1"] = ad.uniform_init(rng, (hidden,), 2 * hidden)
        params[f"{prefix}.out{i}.w2"] = ad.uniform_init(rng, (hidden, n_actions), hidden)
        params[f"{prefix}.out{i}.b2"] = ad.uniform_init(rng, (n_actions,), hidden)
    return params


def critic_dims(params, prefix="critic"):
    """(n_robots, obs_dim, n_actions, hidden, heads) recovered from shapes."""
    n_robots = sum(1 for k in params if k.startswith(f"{prefix}.embed") and k.endswith(".w1"))
    heads = sum(1 for k in params if k.startswith(f"{prefix}.head") and k.endswith(".wq"))
    in_dim, hidden = params[f"{prefix}.embed0.w1"].shape
    n_actions = params[f"{prefix}.out0.w2"].shape[1]
    return n_robots, in_dim - n_actions, n_actions, hidden, heads


@dataclass
class AttentionRecord:
    """Per-head attention weights for one joint input.

    weights[h, i, j] is robot i's weight on robot j under head h; the
    diagonal is zero and each off-diagonal row sums to 1.
    """

    weights: np.ndarray  # (heads, N, N)

    @property
    def n_heads(self):
        return self.weights.shape[0]

    @property
    def n_robots(self):
        return self.weights.shape[1]

    def mean_weights(self):
        """Head-mean weight matrix, the per-robot aggregated attention."""
        return self.weights.mean(axis=0)

    def entropy(self, head):
        """Shannon entropy (natural log) of each robot's distribution over
        teammates for one head."""
        w = self.weights[head]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(w > 0, w * np.log(w), 0.0)
        return -terms.sum(axis=1)


def embed(params, i, obs, act_onehot, prefix="critic"):
    """Embedding vector for robot i from one observation + action encoding."""
    leaves = ParamLeaves(params)
    x = np.concatenate([np.asarray(obs, float), np.asarray(act_onehot, float)])
    expected = params[f"{prefix}.embed{i}.w1"].shape[0]
    if x.shape[0] != expected:
        raise ad.DimensionError(
            f"embedding input for robot {i} has length {x.shape[0]}, expected {expected}"
        )
    out = _embed_forward(leaves, i, Tensor(x[None, :]), prefix)
    return out.data[0]


def _embed_forward(leaves, i, x, prefix):
    h = ad.relu(x @ leaves[f"{prefix}.embed{i}.w1"] + leaves[f"{prefix}.embed{i}.b1"])
    return h @ leaves[f"{prefix}.embed{i}.w2"] + leaves[f"{prefix}.embed{i}.b2"]


def attention_weights(params, embeddings, i, head, prefix="critic"):
    """Softmax weights robot i places on each teammate j != i under one head,
    from raw query/key dot-product scores (no scaling factor)."""
    e = np.asarray(embeddings, float)
    n = e.shape[0]
    if n < 2:
        raise ContractError(f"attention requires at least 2 robots, got {n}")
    wq = params[f"{prefix}.head{head}.wq"]
    wk = params[f"{prefix}.head{head}.wk"]
    q = e[i] @ wq
    scores = np.array([e[j] @ wk @ q for j in range(n) if j != i])
    shifted = scores - scores.max()
    ex = np.exp(shifted)
    return ex / ex.sum()


def contribution(params, embeddings, i, head, prefix="critic"):
    """Attention-weighted sum of teammates' rectified value projections."""
    e = np.asarray(embeddings, float)
    n = e.shape[0]
    alpha = attention_weights(params, embeddings, i, head, prefix)
    wv = params[f"{prefix}.head{head}.wv"]
    teammates = [j for j in range(n) if j != i]
    values = np.stack([np.maximum(e[j] @ wv, 0.0) for j in teammates])
    return alpha @ values


def critic_forward(leaves, obs, act_onehots, *, heads, uniform_attention=False,
                   prefix="critic"):
    """Batched joint forward pass for all robots.

    obs / act_onehots: lists of N Tensors shaped (B, obs_dim) / (B, n_actions).
    Returns (q_vectors, alphas): q_vectors[i] is a (B, n_actions) Tensor of
    robot i's action values; alphas[i][h] is a (B, N-1) Tensor over teammates
    in ascending index order. With uniform_attention the alphas are constant
    1/(N-1) and the query projections are unused.
    """
    n = len(obs)
    if n < 2:
        raise ContractError(f"critic requires at least 2 robots, got {n}")
    batch = obs[0].data.shape[0]

    # Both embedding variants per robot in one pass over the embed net:
    # rows [0, B) use the taken action (key/value side), rows [B, 2B) use a
    # zeroed action encoding (query/head side).
    zero_act = Tensor(np.zeros_like(act_onehots[0].data))
    e_act, e_own = [], []
    for i in range(n):
        stacked_in = ad.concat(
            [ad.concat([obs[i], act_onehots[i]], axis=1),
             ad.concat([obs[i], zero_act], axis=1)],
            axis=0,
        )
        stacked_e = _embed_forward(leaves, i, stacked_in, prefix)
        e_act.append(ad.rows(stacked_e, 0, batch))
        e_own.append(ad.rows(stacked_e, batch, 2 * batch))

    all_act = ad.concat(e_act, axis=0)
    all_own = ad.concat(e_own, axis=0)

    # Per head: project every robot's rows at once, then split.
    keys, vals, queries = [], [], []
    for h in range(heads):
        k_all = all_act @ leaves[f"{prefix}.head{h}.wk"]
        v_all = ad.relu(all_act @ leaves[f"{prefix}.head{h}.wv"])
        keys.append([ad.rows(k_all, j * batch, (j + 1) * batch) for j in range(n)])
        vals.append([ad.rows(v_all, j * batch, (j + 1) * batch) for j in range(n)])
        if uniform_attention:
            queries.append(None)
        else:
            q_all = all_own @ leaves[f"{prefix}.head{h}.wq"]
            queries.append([ad.rows(q_all, i * batch, (i + 1) * batch) for i in range(n)])

    uniform = Tensor(np.full((batch, n - 1), 1.0 / (n - 1)))
    q_vectors, alphas = [], []
    for i in range(n):
        teammates = [j for j in range(n) if j != i]
        head_mixes = []
        head_alphas = []
        for h in range(heads):
            if uniform_attention:
                alpha = uniform
            else:
                scores = ad.concat(
                    [ad.tsum(ad.mul(keys[h][j], queries[h][i]), axis=1, keepdims=True)
                     for j in teammates],
                    axis=1,
                )
                alpha = ad.softmax(scores, axis=1)
            mix = None
            for jj, j in enumerate(teammates):
                term = ad.mul(ad.cols(alpha, jj, jj + 1), vals[h][j])
                mix = term if mix is None else mix + term
            head_mixes.append(mix)
            head_alphas.append(alpha)
        x_i = ad.concat(head_mixes, axis=1)
        hidden = ad.relu(
            ad.concat([e_own[i], x_i], axis=1) @ leaves[f"{prefix}.out{i}.w1"]
            + leaves[f"{prefix}.out{i}.b1"]
        )
        q_vec = hidden @ leaves[f"{prefix}.out{i}.w2"] + leaves[f"{prefix}.out{i}.b2"]
        q_vectors.append(q_vec)
        alphas.append(head_alphas)
    return q_vectors, alphas


def _onehots(actions, n_actions):
    actions = np.asarray(actions)
    out = np.zeros((actions.shape[0], n_actions))
    out[np.arange(actions.shape[0]), actions] = 1.0
    return out


def _single_forward(params, obs, actions, i, uniform_attention, prefix):
    n, obs_dim, n_actions, _, heads = critic_dims(params, prefix)
    obs = np.asarray(obs, float)
    if i < 0 or i >= n:
        raise ContractError(f"robot index {i} out of range for {n} robots")
    if obs.shape != (n, obs_dim):
        raise ad.DimensionError(
            f"joint observation shape {obs.shape}, expected {(n, obs_dim)}"
        )
    onehots = _onehots(np.asarray(actions, int), n_actions)
    leaves = ParamLeaves(params)
    obs_t = [Tensor(obs[j][None, :]) for j in range(n)]
    act_t = [Tensor(onehots[j][None, :]) for j in range(n)]
    q_vectors, alphas = critic_forward(
        leaves, obs_t, act_t, heads=heads,
        uniform_attention=uniform_attention, prefix=prefix,
    )
    weights = np.zeros((heads, n, n))
    for r in range(n):
        teammates = [j for j in range(n) if j != r]
        for h in range(heads):
            weights[h, r, teammates] = alphas[r][h].data[0]
    return q_vectors[i].data[0], AttentionRecord(weights=weights)


def q_values(params, obs, actions, i, prefix="critic"):
    """Action-value vector for robot i given the joint observation and joint
    actions, plus the attention record for the whole team."""
    return _single_forward(params, obs, actions, i, False, prefix)


def baseline_q_values(params, obs, actions, i, prefix="critic"):
    """Same pipeline with attention weights fixed to uniform 1/(N-1)."""
    return _single_forward(params, obs, actions, i, True, prefix)
