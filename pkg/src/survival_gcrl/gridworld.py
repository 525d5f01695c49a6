"""Tabular goal-conditioned mazes with exact hitting-time and value oracles.

States and goals are both indices of free cells (the goal map is the identity
on cells).  The goal is hit at step ``t`` when the state after the ``t``-th
transition equals it, so a start on the goal only counts after re-entry.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .censored_likelihood import SurvivalTuple, Trajectory

ACTIONS = ("up", "down", "left", "right", "stay")
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))

MAZES = {
    "corridor3": "S.G\n",
    "open5": "\n".join(["....."] * 5) + "\n",
    "maze4": (
        "S..#\n"
        ".#..\n"
        ".#.#\n"
        "...G\n"
    ),
    "maze6": (
        "S.....\n"
        ".##.#.\n"
        ".#...#\n"
        "...#..\n"
        ".#.#.#\n"
        "...#.G\n"
    ),
    "maze10": (
        "S...#.....\n"
        ".##.#.###.\n"
        ".#..#...#.\n"
        ".#.###.##.\n"
        ".#.....#..\n"
        ".####.##.#\n"
        "...#...#..\n"
        ".#.#.#.##.\n"
        ".#...#....\n"
        "...#.##..G\n"
    ),
}


class MazeParseError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


@dataclass
class GridMdp:
    width: int
    height: int
    walls: frozenset = frozenset()
    slip: float = 0.0
    start: Optional[tuple] = None
    goal: Optional[tuple] = None
    cells: list = field(init=False)
    index: dict = field(init=False)
    P: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.slip <= 1.0:
            raise ValueError("slip must lie in [0, 1]")
        self.walls = frozenset(self.walls)
        for hint in (self.start, self.goal):
            if hint is not None and hint in self.walls:
                raise ValueError(f"start/goal cell {hint} is a wall")
        self.cells = [(r, c) for r in range(self.height) for c in range(self.width)
                      if (r, c) not in self.walls]
        if not self.cells:
            raise ValueError("maze has no free cells")
        self.index = {cell: i for i, cell in enumerate(self.cells)}
        n, nA = len(self.cells), len(ACTIONS)
        det = np.zeros((nA, n), dtype=np.int64)
        for i, (r, c) in enumerate(self.cells):
            for a, (dr, dc) in enumerate(MOVES):
                det[a, i] = self.index.get((r + dr, c + dc), i)
        self.next_state = det
        P = np.zeros((nA, n, n))
        rows = np.arange(n)
        for a in range(nA):
            P[a, rows, det[a]] += 1.0 - self.slip
            for b in range(nA):
                P[a, rows, det[b]] += self.slip / nA
        self.P = P
        self.cdf = np.cumsum(P, axis=2)
        self.cdf[..., -1] = 1.0

    @property
    def n_states(self) -> int:
        return len(self.cells)

    @property
    def n_actions(self) -> int:
        return len(ACTIONS)

    def state_of(self, cell) -> int:
        return self.index[tuple(cell)]

    def step(self, s: int, a: int, rng: np.random.Generator) -> int:
        return int(np.searchsorted(self.cdf[a, s], rng.random(), side="right"))

    def distances(self, goal: int) -> np.ndarray:
        """Shortest-path step counts to ``goal`` (inf when unreachable)."""
        n = self.n_states
        dist = np.full(n, np.inf)
        dist[goal] = 0
        # reverse BFS over deterministic moves
        preds = [[] for _ in range(n)]
        for a in range(4):
            for s in range(n):
                preds[self.next_state[a, s]].append(s)
        queue = deque([goal])
        while queue:
            u = queue.popleft()
            for v in preds[u]:
                if dist[v] == np.inf:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def hit_distance(self, s: int, goal: int) -> float:
        """Minimal number of actions until the goal is hit from ``s`` (re-entry counts)."""
        if s != goal:
            return self.distances(goal)[s]
        return 1.0

    def fingerprint(self) -> str:
        text = to_text(self) + f"slip={self.slip!r}\n"
        return hashlib.sha256(text.encode()).hexdigest()


def cell_features(mdp: GridMdp) -> np.ndarray:
    """Row and column of every free cell scaled to ``[-1, 1]``."""
    rc = np.array(mdp.cells, dtype=float)
    span = np.maximum(np.array([mdp.height - 1, mdp.width - 1], dtype=float), 1.0)
    return 2.0 * rc / span - 1.0


def parse_maze(text: str, slip: float = 0.0) -> GridMdp:
    """Parse an ASCII maze: ``#`` wall, ``.`` free, ``S``/``G`` start and goal hints."""
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MazeParseError("empty maze", 1, 1)
    width = len(lines[0])
    walls, start, goal = set(), None, None
    for r, line in enumerate(lines):
        if len(line) != width:
            raise MazeParseError(f"row has {len(line)} cells, expected {width}", r + 1,
                                 min(len(line), width) + 1)
        for c, ch in enumerate(line):
            if ch == "#":
                walls.add((r, c))
            elif ch == "S":
                if start is not None:
                    raise MazeParseError("second start marker", r + 1, c + 1)
                start = (r, c)
            elif ch == "G":
                if goal is not None:
                    raise MazeParseError("second goal marker", r + 1, c + 1)
                goal = (r, c)
            elif ch != ".":
                raise MazeParseError(f"unexpected character {ch!r}", r + 1, c + 1)
    return GridMdp(width, len(lines), frozenset(walls), slip, start, goal)


def random_maze(rng: np.random.Generator, height: int, width: int, wall_frac: float = 0.25,
                slip: float = 0.0) -> GridMdp:
    """Random walls; cells may end up disconnected, which the oracles allow."""
    mask = rng.random((height, width)) < wall_frac
    free = np.argwhere(~mask)
    if len(free) == 0:
        mask[0, 0] = False
    walls = frozenset(map(tuple, np.argwhere(mask).tolist()))
    return GridMdp(width, height, walls, slip)


def to_text(mdp: GridMdp) -> str:
    rows = []
    for r in range(mdp.height):
        row = []
        for c in range(mdp.width):
            if (r, c) in mdp.walls:
                row.append("#")
            elif (r, c) == mdp.start:
                row.append("S")
            elif (r, c) == mdp.goal:
                row.append("G")
            else:
                row.append(".")
        rows.append("".join(row))
    return "\n".join(rows) + "\n"


def load_maze(name_or_path: str, slip: float = 0.0) -> GridMdp:
    if name_or_path in MAZES:
        return parse_maze(MAZES[name_or_path], slip)
    with open(name_or_path) as f:
        return parse_maze(f.read(), slip)


# policies


@dataclass
class TabularPolicy:
    """``probs[s, g, a]`` = pi(a | s, g)."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 3:
            raise ValueError("policy table must have shape (states, goals, actions)")
        if np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(-1) - 1.0) > 1e-12):
            raise ValueError("policy rows must be distributions")
        self.cdf = np.cumsum(self.probs, axis=-1)
        self.cdf[..., -1] = 1.0

    def sample(self, s, g, rng: np.random.Generator):
        u = rng.random(np.shape(s))
        cdf = self.cdf[s, g]
        return (u[..., None] >= cdf).sum(-1)


def uniform_policy(mdp: GridMdp) -> TabularPolicy:
    n, nA = mdp.n_states, mdp.n_actions
    return TabularPolicy(np.full((n, n, nA), 1.0 / nA))


def random_policy(mdp: GridMdp, rng: np.random.Generator, concentration: float = 1.0) -> TabularPolicy:
    """Dirichlet-distributed action probabilities for every ``(state, goal)``."""
    n, nA = mdp.n_states, mdp.n_actions
    return TabularPolicy(rng.dirichlet(np.full(nA, concentration), size=(n, n)))


def drift_policy(mdp: GridMdp, weights=(0.15, 0.3, 0.15, 0.3, 0.1)) -> TabularPolicy:
    """Goal-independent stochastic policy with fixed action preferences."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    n = mdp.n_states
    return TabularPolicy(np.broadcast_to(w, (n, n, len(w))).copy())


def optimal_actions(mdp: GridMdp) -> np.ndarray:
    """Boolean mask ``[s, g, a]`` of actions that shorten the path to ``g``.

    On the goal itself ``stay`` is optimal (instant re-entry).  Cells that
    cannot reach the goal get every action.
    """
    n, nA = mdp.n_states, mdp.n_actions
    mask = np.zeros((n, n, nA), dtype=bool)
    for g in range(n):
        dist = mdp.distances(g)
        nxt = dist[mdp.next_state]  # (nA, n)
        for s in range(n):
            if s == g:
                mask[s, g, ACTIONS.index("stay")] = True
            elif np.isinf(dist[s]):
                mask[s, g, :] = True
            else:
                mask[s, g, :] = nxt[:, s] == dist[s] - 1
    return mask


def noisy_optimal_policy(mdp: GridMdp, p_opt: float = 0.8) -> TabularPolicy:
    """Mixture of the (tie-uniform) shortest-path policy and the uniform policy."""
    mask = optimal_actions(mdp).astype(float)
    opt = mask / mask.sum(-1, keepdims=True)
    return TabularPolicy(p_opt * opt + (1.0 - p_opt) / mdp.n_actions)


# exact oracles


@dataclass
class HittingOracle:
    """Substochastic kernel ``M[s, s'] = P^{pi,g}(s' | s) [s' != g]``."""

    mdp: GridMdp
    policy: TabularPolicy
    goal: int

    def __post_init__(self):
        pi = self.policy.probs[:, self.goal, :]  # (n, nA)
        K = np.einsum("sa,ast->st", pi, self.mdp.P)
        M = K.copy()
        M[:, self.goal] = 0.0
        self.kernel = K
        self.M = M

    def exact_survival(self, s: int, t_max: int) -> np.ndarray:
        """``S(t | s) = e_s^T M^{t+1} 1`` for ``t = 0..t_max-1``."""
        if t_max <= 0:
            raise ValueError("t_max must be positive")
        out = np.empty(t_max)
        v = np.zeros(self.M.shape[0])
        v[s] = 1.0
        for t in range(t_max):
            v = v @ self.M
            out[t] = v.sum()
        return out

    def survival_table(self, t_max: int) -> np.ndarray:
        """Survival curves of every start state, shape ``(n, t_max)``."""
        out = np.empty((self.M.shape[0], t_max))
        v = np.ones(self.M.shape[0])
        for t in range(t_max):
            v = self.M @ v
            out[:, t] = v
        return out

    def values(self, gamma: float) -> np.ndarray:
        """``V = -M (I - gamma M)^{-1} 1`` for every start state."""
        n = self.M.shape[0]
        A = np.eye(n) - gamma * self.M
        x = np.linalg.solve(A, self.M @ np.ones(n))
        if not np.all(np.isfinite(x)):
            raise np.linalg.LinAlgError("value system is singular")
        return -x

    def exact_value(self, s: int, gamma: float) -> float:
        return float(self.values(gamma)[s])


def exact_survival(oracle: HittingOracle, s: int, t_max: int) -> np.ndarray:
    return oracle.exact_survival(s, t_max)


def exact_value(oracle: HittingOracle, s: int, gamma: float) -> float:
    return oracle.exact_value(s, gamma)


def value_table(mdp: GridMdp, policy: TabularPolicy, gamma: float) -> np.ndarray:
    """Exact ``V[s, g]`` for all pairs."""
    n = mdp.n_states
    V = np.empty((n, n))
    for g in range(n):
        V[:, g] = HittingOracle(mdp, policy, g).values(gamma)
    return V


def value_iteration(mdp: GridMdp, policy: TabularPolicy, goal: int, gamma: float,
                    tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
    """Policy evaluation by fixed-point iteration on the -1-per-step reward."""
    n = mdp.n_states
    pi = policy.probs[:, goal, :]
    not_goal = np.ones(n)
    not_goal[goal] = 0.0
    # expected reward and continuation per (s, a)
    r = -(mdp.P @ not_goal)  # (nA, n)
    V = np.zeros(n)
    for _ in range(max_iter):
        cont = mdp.P @ (not_goal * V)  # (nA, n)
        new = np.einsum("sa,as->s", pi, r + gamma * cont)
        if np.max(np.abs(new - V)) < tol:
            return new
        V = new
    return V


def q_oracle(mdp: GridMdp, policy: TabularPolicy, goal: int, s: int, a: int,
             gamma: float) -> float:
    """``Q(s, a, g)``: push through ``P(.|s, a)``, goal successors end the episode."""
    V = HittingOracle(mdp, policy, goal).values(gamma)
    p = mdp.P[a, s].copy()
    p[goal] = 0.0
    return float(-p.sum() + gamma * p @ V)


def q_table(mdp: GridMdp, policy: TabularPolicy, goal: int, gamma: float) -> np.ndarray:
    V = HittingOracle(mdp, policy, goal).values(gamma)
    P = mdp.P.copy()
    P[:, :, goal] = 0.0
    return (-P.sum(-1) + gamma * P @ V).T  # (n, nA)


# simulation


def rollout(mdp: GridMdp, policy: TabularPolicy, start: int, goal: int, horizon: int,
            rng: np.random.Generator, first_action: Optional[int] = None):
    """Run ``pi(.|s, goal)`` until the goal is hit or ``horizon`` steps pass.

    Returns the trajectory and its survival tuple with ``c = horizon``.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    states, actions = [start], []
    s = start
    for t in range(horizon):
        if t == 0 and first_action is not None:
            a = first_action
        else:
            a = int(policy.sample(s, goal, rng))
        s = mdp.step(s, a, rng)
        states.append(s)
        actions.append(a)
        if s == goal:
            return Trajectory(states, actions), SurvivalTuple(start, goal, t, horizon, 1)
    return Trajectory(states, actions), SurvivalTuple(start, goal, -1, horizon, 0)


def simulate_hits(mdp: GridMdp, policy: TabularPolicy, starts, goals, horizon: int,
                  rng: np.random.Generator, first_action=None, act=None) -> np.ndarray:
    """Vectorised rollouts; returns first hitting times (``-1`` when censored).

    ``act(states, goals, t, rng)`` overrides action selection when given.
    """
    starts = np.asarray(starts, dtype=np.int64)
    goals = np.broadcast_to(np.asarray(goals, dtype=np.int64), starts.shape).copy()
    s = starts.copy()
    hit = np.full(len(s), -1, dtype=np.int64)
    alive = np.ones(len(s), dtype=bool)
    for t in range(horizon):
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            break
        if t == 0 and first_action is not None:
            a = np.broadcast_to(np.asarray(first_action), idx.shape).astype(np.int64)
        elif act is not None:
            a = np.asarray(act(s[idx], goals[idx], t, rng), dtype=np.int64)
        else:
            a = policy.sample(s[idx], goals[idx], rng)
        u = rng.random(len(idx))
        nxt = (u[:, None] >= mdp.cdf[a, s[idx]]).sum(-1)
        s[idx] = nxt
        reached = nxt == goals[idx]
        hit[idx[reached]] = t
        alive[idx[reached]] = False
    return hit


def collect_trajectories(mdp: GridMdp, policy: TabularPolicy, n_traj: int, length: int,
                         rng: np.random.Generator) -> list:
    """Fixed-length behaviour trajectories from uniform starts.

    The commanded goal is redrawn uniformly whenever it is reached, so a
    goal-conditioned behaviour policy keeps moving for the whole episode.
    """
    n = mdp.n_states
    s = rng.integers(0, n, size=n_traj)
    g = rng.integers(0, n, size=n_traj)
    states = np.empty((n_traj, length + 1), dtype=np.int64)
    actions = np.empty((n_traj, length), dtype=np.int64)
    states[:, 0] = s
    for t in range(length):
        a = policy.sample(s, g, rng)
        u = rng.random(n_traj)
        s = (u[:, None] >= mdp.cdf[a, s]).sum(-1)
        actions[:, t] = a
        states[:, t + 1] = s
        done = s == g
        g = np.where(done, rng.integers(0, n, size=n_traj), g)
    return [Trajectory(states[i], actions[i]) for i in range(n_traj)]


def trajectories_to_csv(trajs) -> str:
    lines = ["traj,t,state,action"]
    for i, tr in enumerate(trajs):
        for t, s in enumerate(tr.states.tolist()):
            a = tr.actions[t] if t < len(tr.actions) else -1
            lines.append(f"{i},{t},{s},{a}")
    return "\n".join(lines) + "\n"


def trajectories_from_csv(text: str) -> list:
    rows = np.loadtxt(text.splitlines()[1:], delimiter=",", dtype=np.int64, ndmin=2)
    trajs = []
    for i in np.unique(rows[:, 0]):
        part = rows[rows[:, 0] == i]
        part = part[np.argsort(part[:, 1])]
        trajs.append(Trajectory(part[:, 2], part[:-1, 3]))
    return trajs
