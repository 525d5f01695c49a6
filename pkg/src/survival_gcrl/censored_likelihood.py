"""Survival tuples, the censored negative log-likelihood and hindsight relabeling.

Conventions used everywhere in the package:

* an event at ``tau`` means the state after ``tau + 1`` transitions satisfies
  the goal, so reaching the goal with the first action is ``tau = 0``;
* ``c`` is the number of transitions observed from the anchor state.  An
  uncensored tuple has ``tau < c``; a censored one (``delta = 0``) tells us
  only that ``T >= c``.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .grouped_time import BinnedHazard, BinSpec, pch_nll_terms, pcs_nll_terms, tuple_counts
from .survival_core import HazardCurve, clamp

CSV_HEADER = ("state", "goal", "tau", "c", "delta")
BIN_MAGIC = b"SVLDATA1"


@dataclass(frozen=True)
class SurvivalTuple:
    state: int
    goal: int
    tau: int
    c: int
    delta: int

    def __post_init__(self):
        if self.delta not in (0, 1):
            raise ValueError("delta must be 0 or 1")
        if self.c < 0:
            raise ValueError("censoring time must be non-negative")
        if self.delta == 1 and not 0 <= self.tau <= self.c:
            raise ValueError(f"event time {self.tau} outside [0, {self.c}]")


@dataclass
class SurvivalDataset:
    """Columnar store of survival tuples (integer ids and times)."""

    state: np.ndarray
    goal: np.ndarray
    tau: np.ndarray
    c: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        for name in CSV_HEADER:
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.int64))
        n = len(self.delta)
        if any(len(getattr(self, name)) != n for name in CSV_HEADER):
            raise ValueError("dataset columns differ in length")
        # censored rows carry tau = -1 so that the files are canonical
        self.tau = np.where(self.delta == 1, self.tau, -1)
        ev = self.delta == 1
        if np.any((self.delta != 0) & ~ev) or np.any(self.c < 0):
            raise ValueError("malformed delta or censoring column")
        if np.any(ev & ((self.tau < 0) | (self.tau > self.c))):
            raise ValueError("event time outside [0, c]")

    def __len__(self):
        return len(self.delta)

    def __getitem__(self, idx) -> "SurvivalDataset":
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return SurvivalDataset(*(getattr(self, name)[idx] for name in CSV_HEADER))

    def __iter__(self) -> Iterator[SurvivalTuple]:
        for row in zip(*(getattr(self, name).tolist() for name in CSV_HEADER)):
            yield SurvivalTuple(*row)

    @classmethod
    def from_tuples(cls, tuples: Sequence[SurvivalTuple]) -> "SurvivalDataset":
        cols = [[getattr(t, name) for t in tuples] for name in CSV_HEADER]
        return cls(*cols)

    @classmethod
    def concat(cls, parts: Sequence["SurvivalDataset"]) -> "SurvivalDataset":
        return cls(*(np.concatenate([getattr(p, name) for p in parts]) for name in CSV_HEADER))

    def counts(self, spec: BinSpec, kind: str):
        return tuple_counts(spec, kind, self.tau, self.c, self.delta)

    # serialization

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(zip(*(getattr(self, name).tolist() for name in CSV_HEADER)))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SurvivalDataset":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"expected CSV header {','.join(CSV_HEADER)}, got {header}")
        rows = [[int(x) for x in row] for row in reader if row]
        if not rows:
            return cls(*([] for _ in CSV_HEADER))
        return cls(*zip(*rows))

    def to_bytes(self) -> bytes:
        """``SVLDATA1`` magic, little-endian u64 row count, then five int64 columns."""
        cols = b"".join(getattr(self, name).astype("<i8").tobytes() for name in CSV_HEADER)
        return BIN_MAGIC + struct.pack("<Q", len(self)) + cols

    @classmethod
    def from_bytes(cls, data: bytes) -> "SurvivalDataset":
        if data[:8] != BIN_MAGIC:
            raise ValueError("not a survival dataset file (bad magic)")
        (n,) = struct.unpack_from("<Q", data, 8)
        if len(data) != 16 + 5 * 8 * n:
            raise ValueError("truncated or oversized survival dataset file")
        arr = np.frombuffer(data, dtype="<i8", offset=16).reshape(5, n)
        return cls(*arr)


def nll(h, tup: SurvivalTuple) -> float:
    """Per-step censored NLL of one tuple.

    Events contribute ``-[log h(tau) + sum_{k < tau} log(1 - h(k))]``;
    censored tuples contribute ``-sum_{k < c} log(1 - h(k))``.  A curve with
    ``tail_h`` is extended with that hazard, otherwise it must be long enough.
    """
    curve = h if isinstance(h, HazardCurve) else HazardCurve(h)
    need = tup.tau + 1 if tup.delta else tup.c
    hs = curve.h
    if len(hs) < need:
        if curve.tail_h is None:
            raise ValueError(f"hazard curve of length {len(hs)} cannot cover {need} steps")
        hs = np.concatenate([hs, np.full(need - len(hs), curve.tail_h)])
    hs = clamp(hs)
    if tup.delta:
        return -(np.log(hs[tup.tau]) + np.log1p(-hs[: tup.tau]).sum())
    return -float(np.log1p(-hs[: tup.c]).sum())


def binned_nll(bh: BinnedHazard, spec: BinSpec, tup: SurvivalTuple) -> float:
    """Model-level NLL: ``q0`` handles ``T = 0`` and the bins see ``T - 1``."""
    q0 = float(clamp(bh.q0))
    if tup.delta and tup.tau == 0:
        return -np.log(q0)
    if not tup.delta and tup.c == 0:
        return 0.0
    head = -np.log1p(-q0)
    rest = pcs_nll_terms if bh.kind == "pcs" else pch_nll_terms
    tau = tup.tau - 1 if tup.delta else 0
    return head + rest(bh, spec, tau, tup.c - 1, tup.delta, use_tail=True)


def empirical_risk(model, dataset, spec: Optional[BinSpec] = None,
                   kind: str = "unbinned") -> float:
    """Mean NLL over a dataset.

    ``model`` is either a callable ``(state, goal) -> HazardCurve`` for
    ``kind="unbinned"``, or an object with ``forward(state, goal)`` returning a
    :class:`BinnedHazard` for the binned kinds.
    """
    if len(dataset) == 0:
        raise ValueError("empirical risk of an empty dataset")
    tuples = list(dataset)
    total = 0.0
    for tup in tuples:
        if kind == "unbinned":
            total += nll(model(tup.state, tup.goal), tup)
        else:
            bh = model.forward(tup.state, tup.goal)
            if bh.kind != kind:
                bh = BinnedHazard(kind, bh.bin_values, bh.tail_value, bh.q0)
            total += binned_nll(bh, spec, tup)
    return total / len(tuples)


# constant-hazard MLE and synthetic data


def fit_constant_hazard(dataset: SurvivalDataset) -> float:
    """Closed-form MLE of a time-constant hazard: events over at-risk steps."""
    ev = dataset.delta == 1
    at_risk = np.where(ev, dataset.tau + 1, dataset.c).sum()
    if at_risk == 0:
        raise ValueError("no at-risk steps in dataset")
    return float(ev.sum() / at_risk)


def censor_rate_for(h: float, censor_frac: float) -> float:
    """Geometric censoring parameter giving ``Pr(censored) = censor_frac``."""
    return censor_frac * h / (1.0 - censor_frac * (1.0 - h))


def simulate_geometric(h: float, n: int, rng: np.random.Generator,
                       censor_frac: float = 0.0) -> SurvivalDataset:
    """Event times ``T ~ Geometric(h)`` on ``{0, 1, ...}`` with independent
    geometric censoring tuned so that a fraction ``censor_frac`` is censored."""
    T = rng.geometric(h, size=n) - 1
    if censor_frac > 0:
        C = rng.geometric(censor_rate_for(h, censor_frac), size=n) - 1
    else:
        C = T + 1
    delta = (T < C).astype(np.int64)
    c = C
    zeros = np.zeros(n, dtype=np.int64)
    return SurvivalDataset(zeros, zeros, T, c, delta)


def geometric_entropy(h: float) -> float:
    """Entropy (nats) of the geometric law with success probability ``h``."""
    return -(h * np.log(h) + (1.0 - h) * np.log1p(-h)) / h


# trajectories and relabeling


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    achieved: Optional[np.ndarray] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        if len(self.actions) != max(len(self.states) - 1, 0):
            raise ValueError("a trajectory needs exactly one action per transition")
        # identity goal map by default
        self.achieved = self.states if self.achieved is None else np.asarray(self.achieved)

    def __len__(self):
        return len(self.states)


SOURCES = ("cur", "traj", "rand")


@dataclass(frozen=True)
class RelabelConfig:
    p_cur: float = 0.08
    p_traj: float = 0.6
    p_rand: float = 0.32

    def __post_init__(self):
        p = np.array([self.p_cur, self.p_traj, self.p_rand])
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"goal source probabilities must be >= 0 and sum to 1: {p}")

    @property
    def probs(self) -> np.ndarray:
        return np.array([self.p_cur, self.p_traj, self.p_rand])

    def sample_sources(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Indices into :data:`SOURCES`."""
        return rng.choice(3, size=n, p=self.probs)


def label_goal(achieved: np.ndarray, i: int, goal, cap: Optional[int] = None):
    """Scan forward from anchor ``i`` for the first state matching ``goal``.

    Returns ``(tau, c, delta)`` with ``c = min(len - i - 1, cap)``.
    """
    c = len(achieved) - i - 1
    if cap is not None:
        c = min(c, cap)
    window = achieved[i + 1: i + 1 + c]
    hit = np.flatnonzero(window == goal)
    if len(hit):
        return int(hit[0]), c, 1
    return -1, c, 0


def relabel(traj: Trajectory, cfg: RelabelConfig, rng: np.random.Generator,
            horizon_cap: Optional[int] = None, goal_pool: Optional[np.ndarray] = None,
            anchors: Optional[Sequence[int]] = None,
            sources: Optional[list] = None) -> Iterator[SurvivalTuple]:
    """Turn a trajectory into goal-labeled survival tuples, one per anchor.

    The goal for each anchor comes from the current state, a uniformly chosen
    later state of the same trajectory, or ``goal_pool`` (defaults to this
    trajectory's achieved goals).  Labels always come from a forward scan, so
    a current-state goal counts as an event only once it is re-entered.
    When ``sources`` is a list, the chosen source name is appended per tuple.
    """
    T = len(traj)
    ach = traj.achieved
    pool = ach if goal_pool is None else np.asarray(goal_pool)
    if anchors is None:
        anchors = range(T - 1)
    for i in anchors:
        if not 0 <= i < T - 1:
            continue
        src = int(cfg.sample_sources(rng, 1)[0])
        if src == 0:
            goal = ach[i]
        elif src == 1:
            goal = ach[rng.integers(i + 1, T)]
        else:
            goal = pool[rng.integers(len(pool))]
        tau, c, delta = label_goal(ach, i, goal, horizon_cap)
        if sources is not None:
            sources.append(SOURCES[src])
        yield SurvivalTuple(int(traj.states[i]), int(goal), tau if delta else -1, c, delta)


def relabel_dataset(trajs: Sequence[Trajectory], n: int, cfg: RelabelConfig,
                    rng: np.random.Generator, horizon_cap: Optional[int] = None,
                    goal_pool: Optional[np.ndarray] = None) -> SurvivalDataset:
    """Sample exactly ``n`` tuples: anchors uniform over all transitions."""
    sizes = np.array([len(t) - 1 for t in trajs])
    if sizes.sum() <= 0:
        raise ValueError("trajectories contain no transitions")
    if goal_pool is None:
        goal_pool = np.concatenate([t.achieved for t in trajs])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    flat = rng.integers(0, offsets[-1], size=n)
    which = np.searchsorted(offsets, flat, side="right") - 1
    anchor = flat - offsets[which]
    src = cfg.sample_sources(rng, n)
    u = rng.random(n)
    pick = rng.integers(0, len(goal_pool), size=n)
    cols = np.zeros((5, n), dtype=np.int64)
    for r in range(n):
        tr = trajs[which[r]]
        i = int(anchor[r])
        ach = tr.achieved
        if src[r] == 0:
            goal = ach[i]
        elif src[r] == 1:
            span = len(tr) - i - 1
            goal = ach[i + 1 + int(u[r] * span)]
        else:
            goal = goal_pool[pick[r]]
        tau, c, delta = label_goal(ach, i, goal, horizon_cap)
        cols[:, r] = (tr.states[i], goal, tau, c, delta)
    return SurvivalDataset(*cols)
