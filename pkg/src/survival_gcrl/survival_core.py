"""Discrete-time survival math for goal-hitting times.

Time index ``t`` counts transitions: the event happens at ``t`` when the state
reached after the ``t``-th action satisfies the goal, so ``t = 0`` is an
immediate hit.  ``S(t) = Pr(T > t)`` and ``h(t) = Pr(T = t | T >= t)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

EPS = 1e-6


def clamp(p):
    """Clip probabilities into ``[EPS, 1 - EPS]`` before taking logs."""
    return np.clip(p, EPS, 1.0 - EPS)


def check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"discount must lie in [0, 1), got {gamma}")
    return gamma


@dataclass(frozen=True)
class HazardCurve:
    h: np.ndarray
    tail_h: Optional[float] = None

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.ndim != 1:
            raise ValueError("hazard curve must be one-dimensional")
        if np.any((h < 0) | (h > 1)) or not np.all(np.isfinite(h)):
            raise ValueError("hazards must lie in [0, 1]")
        if self.tail_h is not None and not 0.0 <= self.tail_h <= 1.0:
            raise ValueError("tail hazard must lie in [0, 1]")
        object.__setattr__(self, "h", h)

    def __len__(self):
        return len(self.h)


@dataclass(frozen=True)
class SurvivalCurve:
    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        if s.ndim != 1:
            raise ValueError("survival curve must be one-dimensional")
        if np.any((s < 0) | (s > 1)):
            raise ValueError("survival probabilities must lie in [0, 1]")
        if np.any(np.diff(s) > 1e-12):
            raise ValueError("survival curve must be non-increasing")
        object.__setattr__(self, "s", s)

    def __len__(self):
        return len(self.s)


# Tail policies for the part of the discounted sum beyond the curve.
TRUNCATE = "truncate"
CONSTANT_SURVIVAL = "constant-survival"


@dataclass(frozen=True)
class ConstantHazardTail:
    h_tail: float

    def __post_init__(self):
        if not 0.0 <= self.h_tail <= 1.0:
            raise ValueError("tail hazard must lie in [0, 1]")


TailSpec = Union[str, ConstantHazardTail]


def _hazards(h) -> np.ndarray:
    if isinstance(h, HazardCurve):
        return h.h
    return HazardCurve(h).h


def _survival(s) -> np.ndarray:
    if isinstance(s, SurvivalCurve):
        return s.s
    return np.asarray(s, dtype=float)


def hazard_to_survival(h) -> np.ndarray:
    """``S[t] = prod_{k <= t} (1 - h[k])``."""
    return np.cumprod(1.0 - _hazards(h))


def survival_to_hazard(s) -> np.ndarray:
    """Inverse of :func:`hazard_to_survival`; zero-survival steps get hazard 1."""
    s = _survival(s)
    prev = np.concatenate([[1.0], s[:-1]])
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(prev > 0, 1.0 - s / np.where(prev > 0, prev, 1.0), 1.0)
    return np.clip(h, 0.0, 1.0)


def event_pmf(h) -> np.ndarray:
    """``Pr(T = t) = h[t] * S[t-1]`` with ``S[-1] = 1``."""
    h = _hazards(h)
    s = np.cumprod(1.0 - h)
    prev = np.concatenate([[1.0], s[:-1]])
    return h * prev


def tail_sum(s_last: float, n: int, gamma: float, tail: TailSpec) -> float:
    """Closed form of ``sum_{t >= n} gamma^t S(t)`` given ``S(n - 1) = s_last``."""
    if tail == TRUNCATE:
        return 0.0
    if tail == CONSTANT_SURVIVAL:
        return gamma**n * s_last / (1.0 - gamma)
    if isinstance(tail, ConstantHazardTail):
        keep = 1.0 - tail.h_tail
        return gamma**n * s_last * keep / (1.0 - gamma * keep)
    raise ValueError(f"unknown tail policy {tail!r}")


def value_from_survival(s, gamma: float, tail: TailSpec = TRUNCATE) -> float:
    """Goal-conditioned value ``-sum_t gamma^t S(t)`` of the -1-per-step reward.

    ``tail`` decides how the sum continues past the end of ``s``: dropped
    (``"truncate"``), held at the last survival value (``"constant-survival"``)
    or decayed with a constant per-step hazard (:class:`ConstantHazardTail`).
    """
    gamma = check_gamma(gamma)
    s = _survival(s)
    if len(s) == 0:
        s_last = 1.0
        head = 0.0
    else:
        s_last = float(s[-1])
        head = float(np.dot(gamma ** np.arange(len(s)), s))
    return -(head + tail_sum(s_last, len(s), gamma, tail))


def q_value_from_survival(s, gamma: float, tail: TailSpec = TRUNCATE) -> float:
    """Same identity for the action-conditioned survival curve ``S(t | s, a, g)``."""
    return value_from_survival(s, gamma, tail)


def constant_hazard_value(h: float, gamma: float) -> float:
    """Value of a geometric hitting time with per-step hazard ``h``."""
    gamma = check_gamma(gamma)
    return -(1.0 - h) / (1.0 - gamma * (1.0 - h))
