"""Policy extraction from survival values with advantage-weighted regression.

Tabular policies are fitted in closed form: the weighted maximum-likelihood
solution of a categorical policy is the row-normalised table of weighted
counts.  Value functions are passed as ``V[state, goal]`` tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import checkpoint
from .gridworld import GridMdp, TabularPolicy, simulate_hits


@dataclass(frozen=True)
class AwrConfig:
    beta: float = 3.0
    subgoal_step: int = 5
    weight_clip: float = 100.0

    def __post_init__(self):
        if self.beta <= 0 or self.subgoal_step < 1 or self.weight_clip <= 0:
            raise ValueError("need beta > 0, subgoal_step >= 1 and weight_clip > 0")


def _awr(delta_v, beta: float, clip: float):
    # exp(beta * dV) capped at clip, computed without overflow
    x = np.minimum(beta * np.asarray(delta_v, dtype=float), np.log(clip))
    return np.minimum(np.exp(x), clip)


def awr_weight_high(V, s_t, s_tk, g, beta: float, clip: float = 100.0):
    """``exp(beta (V(s_{t+k}, g) - V(s_t, g)))`` clipped at ``clip``."""
    return _awr(V[s_tk, g] - V[s_t, g], beta, clip)


def awr_weight_low(V, s_t, s_t1, s_tk, beta: float, clip: float = 100.0):
    """Same weight with the subgoal ``s_{t+k}`` as the conditioning goal."""
    return _awr(V[s_t1, s_tk] - V[s_t, s_tk], beta, clip)


def _normalise(W: np.ndarray) -> np.ndarray:
    tot = W.sum(-1, keepdims=True)
    out = np.where(tot > 0, W / np.where(tot > 0, tot, 1.0), 1.0 / W.shape[-1])
    return out


def _hindsight_goals(trajs, rng: np.random.Generator, goals_per_step: int):
    """Rows ``(traj, t, goal)`` with goals drawn uniformly from the strict future."""
    rows = []
    for i, tr in enumerate(trajs):
        T = len(tr) - 1
        if T < 1:
            continue
        t = np.repeat(np.arange(T), goals_per_step)
        j = t + 1 + (rng.random(len(t)) * (T - t)).astype(np.int64)
        rows.append(np.stack([np.full(len(t), i), t, tr.achieved[j]], axis=1))
    if not rows:
        raise ValueError("no transitions to fit a policy on")
    return np.concatenate(rows)


def _flatten(trajs):
    S = np.concatenate([tr.states[:-1] for tr in trajs])
    S1 = np.concatenate([tr.states[1:] for tr in trajs])
    A = np.concatenate([tr.actions for tr in trajs])
    return S, S1, A


def fit_flat_policy(trajs: Sequence, V: np.ndarray, cfg: AwrConfig, n_states: int,
                    n_actions: int, rng: np.random.Generator,
                    goals_per_step: int = 1) -> TabularPolicy:
    """Flat AWR: weight ``exp(beta (V(s_{t+1}, g) - V(s_t, g)))`` on hindsight goals."""
    rows = _hindsight_goals(trajs, rng, goals_per_step)
    offs = np.concatenate([[0], np.cumsum([len(tr) - 1 for tr in trajs])])
    S, S1, A = _flatten(trajs)
    flat = offs[rows[:, 0]] + rows[:, 1]
    s, s1, a, g = S[flat], S1[flat], A[flat], rows[:, 2]
    w = awr_weight_low(V, s, s1, g, cfg.beta, cfg.weight_clip)
    W = np.zeros((n_states, n_states, n_actions))
    np.add.at(W, (s, g, a), w)
    return TabularPolicy(_normalise(W))


def behavior_cloning(trajs: Sequence, n_states: int, n_actions: int,
                     rng: np.random.Generator, goals_per_step: int = 1) -> TabularPolicy:
    """Unweighted counts on the same hindsight goals as :func:`fit_flat_policy`."""
    rows = _hindsight_goals(trajs, rng, goals_per_step)
    offs = np.concatenate([[0], np.cumsum([len(tr) - 1 for tr in trajs])])
    S, _, A = _flatten(trajs)
    flat = offs[rows[:, 0]] + rows[:, 1]
    W = np.zeros((n_states, n_states, n_actions))
    np.add.at(W, (S[flat], rows[:, 2], A[flat]), 1.0)
    return TabularPolicy(_normalise(W))


@dataclass
class HierPolicy:
    """``high[s, g, subgoal]`` and ``low[s, subgoal, a]`` with subgoal step ``k``."""

    high: np.ndarray
    low: np.ndarray
    k: int

    def __post_init__(self):
        for name in ("high", "low"):
            tab = getattr(self, name)
            if np.any(np.abs(tab.sum(-1) - 1.0) > 1e-12):
                raise ValueError(f"{name}-level rows must sum to 1")

    def to_bytes(self) -> bytes:
        return checkpoint.dumps({"high": self.high, "low": self.low},
                                {"model": "hier_policy", "k": self.k})

    @classmethod
    def from_bytes(cls, data: bytes) -> "HierPolicy":
        arrays, meta = checkpoint.loads(data)
        if meta.get("model") != "hier_policy":
            raise ValueError("checkpoint does not hold a hierarchical policy")
        return cls(arrays["high"], arrays["low"], int(meta["k"]))


def fit_hier_policy(trajs: Sequence, V: np.ndarray, cfg: AwrConfig, n_states: int,
                    n_actions: int, rng: np.random.Generator,
                    goals_per_step: int = 1) -> HierPolicy:
    """Weighted maximum likelihood for both levels.

    Subgoals are the achieved state ``k`` steps ahead, or the final state
    when fewer than ``k`` steps remain.
    """
    k = cfg.subgoal_step
    rows = _hindsight_goals(trajs, rng, goals_per_step)
    Wh = np.zeros((n_states, n_states, n_states))
    Wl = np.zeros((n_states, n_states, n_actions))
    for i, tr in enumerate(trajs):
        T = len(tr) - 1
        if T < 1:
            continue
        t = np.arange(T)
        s, s1, a = tr.states[:-1], tr.states[1:], tr.actions
        sk = tr.achieved[np.minimum(t + k, T)]
        np.add.at(Wl, (s, sk, a), awr_weight_low(V, s, s1, sk, cfg.beta, cfg.weight_clip))
        mine = rows[rows[:, 0] == i]
        st, g = mine[:, 1], mine[:, 2]
        s_t = tr.states[st]
        s_k = tr.achieved[np.minimum(st + k, T)]
        np.add.at(Wh, (s_t, g, s_k), awr_weight_high(V, s_t, s_k, g, cfg.beta, cfg.weight_clip))
    return HierPolicy(_normalise(Wh), _normalise(Wl), k)


def act(policy: HierPolicy, s: int, g: int, step_counter: int, rng: np.random.Generator,
        subgoal: Optional[int] = None, greedy: bool = False):
    """Return ``(action, subgoal)``.

    The subgoal is redrawn from the high level every ``k`` steps, and also
    when none is set yet or the agent already stands on it.
    """
    if subgoal is None or step_counter % policy.k == 0 or s == subgoal:
        row = policy.high[s, g]
        subgoal = int(np.argmax(row)) if greedy else int(rng.choice(len(row), p=row))
    row = policy.low[s, subgoal]
    a = int(np.argmax(row)) if greedy else int(rng.choice(len(row), p=row))
    return a, subgoal


def greedy(policy: TabularPolicy) -> TabularPolicy:
    """Deterministic argmax policy (ties go to the lowest action index)."""
    probs = np.zeros_like(policy.probs)
    best = policy.probs.argmax(-1)
    np.put_along_axis(probs, best[..., None], 1.0, axis=-1)
    return TabularPolicy(probs)


def policy_to_bytes(policy: TabularPolicy) -> bytes:
    return checkpoint.dumps({"probs": policy.probs}, {"model": "flat_policy"})


def policy_from_bytes(data: bytes) -> TabularPolicy:
    arrays, meta = checkpoint.loads(data)
    if meta.get("model") != "flat_policy":
        raise ValueError("checkpoint does not hold a flat policy")
    return TabularPolicy(arrays["probs"])


# evaluation


def sample_tasks(mdp: GridMdp, n: int, rng: np.random.Generator):
    """Uniform ``(start, goal)`` pairs of distinct, mutually reachable cells."""
    D = np.stack([mdp.distances(g) for g in range(mdp.n_states)], axis=1)  # D[s, g]
    ok = np.argwhere(np.isfinite(D) & (D > 0))
    pick = ok[rng.integers(0, len(ok), size=n)]
    return pick[:, 0], pick[:, 1], D[pick[:, 0], pick[:, 1]].astype(np.int64)


def success_rate(mdp: GridMdp, policy: TabularPolicy, starts, goals, dist,
                 rng: np.random.Generator, budget_factor: int = 4) -> float:
    """Fraction of episodes hitting the goal within ``budget_factor * dist`` steps."""
    budget = budget_factor * np.asarray(dist)
    hit = simulate_hits(mdp, policy, starts, goals, int(budget.max()), rng)
    return float(np.mean((hit >= 0) & (hit + 1 <= budget)))


def hier_success_rate(mdp: GridMdp, policy: HierPolicy, starts, goals, dist,
                      rng: np.random.Generator, budget_factor: int = 4,
                      greedy_mode: bool = True) -> float:
    wins = 0
    for s0, g, d in zip(np.asarray(starts).tolist(), np.asarray(goals).tolist(),
                        np.asarray(dist).tolist()):
        s, sub = s0, None
        for t in range(budget_factor * d):
            a, sub = act(policy, s, g, t, rng, sub, greedy_mode)
            s = mdp.step(s, a, rng)
            if s == g:
                wins += 1
                break
    return wins / len(dist)
