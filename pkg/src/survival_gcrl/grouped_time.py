"""Geometric time binning and the two binned infinite-horizon estimators.

PCH keeps the per-step hazard constant inside a bin; PCS keeps the survival
function constant inside a bin.  Both describe the prefix ``[0, H)`` with
``K`` bins and treat ``[H, inf)`` as one extra interval.

Model-level quantities (:func:`expand_pch`, :func:`binned_value`,
:func:`tuple_counts`) split off the immediate hit ``T = 0`` with probability
``q0`` and apply the bins to the shifted time ``T - 1``.  That is the
convention under which ``S(b_0) = 1 - q0`` and
``S(b_{k+1}) = S(b_k) (1 - h_k)^{L_k}`` hold.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .survival_core import HazardCurve, check_gamma, clamp

KINDS = ("finite", "pch", "pcs")


@dataclass(frozen=True)
class BinSpec:
    edges: tuple

    def __post_init__(self):
        edges = tuple(int(b) for b in self.edges)
        if len(edges) < 2 or edges[0] != 0:
            raise ValueError("bin edges must start at 0 and contain at least two entries")
        if any(b1 <= b0 for b0, b1 in zip(edges, edges[1:])):
            raise ValueError(f"bin edges must be strictly increasing: {edges}")
        object.__setattr__(self, "edges", edges)

    @property
    def K(self) -> int:
        return len(self.edges) - 1

    @property
    def H(self) -> int:
        return self.edges[-1]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(np.asarray(self.edges, dtype=np.int64))


def geometric_edges(K: int, H: int) -> BinSpec:
    """Edges ``b_k = max(b_{k-1} + 1, floor(rho^k))`` with ``rho = H^(1/K)``.

    ``b_0`` is pinned to 0 and ``b_K`` to ``H`` exactly.  When the floor and
    the strict-increase repair would overrun ``H`` before ``k = K``, the edges
    are pulled back so that the last ones are consecutive integers.
    """
    if K < 1:
        raise ValueError("need at least one bin")
    if H < K:
        raise ValueError(f"horizon H={H} is smaller than bin count K={K}")
    rho = H ** (1.0 / K)
    edges = [0]
    for k in range(1, K):
        b = max(edges[-1] + 1, math.floor(rho**k + 1e-9))
        edges.append(min(b, H - (K - k)))
    edges.append(H)
    return BinSpec(tuple(edges))


def uniform_edges(H: int, L: int = 1) -> BinSpec:
    if H % L:
        raise ValueError("H must be a multiple of the bin length")
    return BinSpec(tuple(range(0, H + 1, L)))


def locate(spec: BinSpec, t: int):
    """Split ``t`` into ``(bin index, offset)``; ``t = H`` maps to ``(K-1, L_{K-1})``."""
    t = int(t)
    if t < 0 or t > spec.H:
        raise ValueError(f"time {t} outside [0, {spec.H}]")
    if t == spec.H:
        return spec.K - 1, int(spec.lengths[-1])
    k = bisect_right(spec.edges, t) - 1
    return k, t - spec.edges[k]


def completed_bins(spec: BinSpec, t: int) -> int:
    """Number of bins whose right edge is ``<= t``."""
    return bisect_right(spec.edges, int(t)) - 1


@dataclass
class BinnedHazard:
    kind: str
    bin_values: np.ndarray
    tail_value: float = 0.0
    q0: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        self.bin_values = np.asarray(self.bin_values, dtype=float)
        probs = np.concatenate([self.bin_values, [self.tail_value, self.q0]])
        if np.any((probs < 0) | (probs > 1)) or not np.all(np.isfinite(probs)):
            raise ValueError("binned hazard probabilities must lie in [0, 1]")


def _check_obs(spec: BinSpec, tau, c, delta, tail_ok: bool):
    if delta not in (0, 1):
        raise ValueError("event flag must be 0 or 1")
    if c < 0 or (delta == 1 and not 0 <= tau <= c):
        raise ValueError(f"inconsistent observation tau={tau}, c={c}, delta={delta}")
    if not tail_ok and (c > spec.H or (delta == 1 and tau >= spec.H)):
        raise ValueError(f"observation beyond horizon {spec.H} and no tail hazard given")


def pch_nll_terms(bh: BinnedHazard, spec: BinSpec, tau: int, c: int, delta: int,
                  use_tail: bool = False) -> float:
    """Grouped-time NLL of one observation under piecewise-constant hazards.

    ``c`` is the number of steps observed without the event, so a censored
    observation contributes ``log Pr(T >= c)``.  With ``use_tail`` the
    interval ``[H, inf)`` carries ``bh.tail_value`` and times past ``H`` are
    accepted.
    """
    _check_obs(spec, tau, c, delta, use_tail)
    h = clamp(np.append(bh.bin_values, bh.tail_value))
    L = spec.lengths
    log_keep = np.log1p(-h)

    def survive(t):
        if t > spec.H:
            return float(np.dot(L, log_keep[:-1]) + (t - spec.H) * log_keep[-1])
        k, m = locate(spec, t)
        return float(np.dot(L[:k], log_keep[:k]) + m * log_keep[k])

    if delta:
        if tau >= spec.H:
            k, m = spec.K, tau - spec.H
        else:
            k, m = locate(spec, tau)
        ll = math.log(h[k]) + float(np.dot(L[:k], log_keep[:k])) + m * log_keep[k]
    else:
        ll = survive(c)
    return -ll


def pcs_nll_terms(bh: BinnedHazard, spec: BinSpec, tau: int, c: int, delta: int,
                  use_tail: bool = False) -> float:
    """Grouped-time NLL with interval hazards; censoring counts completed bins only."""
    _check_obs(spec, tau, c, delta, use_tail)
    h = clamp(np.append(bh.bin_values, bh.tail_value))
    log_keep = np.log1p(-h)
    if delta:
        k = spec.K if tau >= spec.H else locate(spec, tau)[0]
        return -(math.log(h[k]) + float(log_keep[:k].sum()))
    k = min(completed_bins(spec, c), spec.K)
    return -float(log_keep[:k].sum())


def expand_pch(bh: BinnedHazard, spec: BinSpec) -> HazardCurve:
    """Per-step hazards over ``t = 0..H``: ``h(0) = q0``, ``h(t) = bin(t - 1)``."""
    steps = np.repeat(bh.bin_values, spec.lengths)
    return HazardCurve(np.concatenate([[bh.q0], steps]), tail_h=float(bh.tail_value))


def expand_pcs_survival(bh: BinnedHazard, spec: BinSpec) -> np.ndarray:
    """Survival over ``t = 0..H``, held at ``S(b_k)`` on each ``[b_k, b_{k+1})``."""
    at_edges = (1.0 - bh.q0) * np.concatenate([[1.0], np.cumprod(1.0 - bh.bin_values)])
    return np.append(np.repeat(at_edges[:-1], spec.lengths), at_edges[-1])


def edge_survival(q0, bins, lengths=None):
    """``S(b_k)`` for ``k = 0..K``; ``lengths=None`` means interval hazards (PCS)."""
    q0 = np.asarray(q0, dtype=float)
    bins = np.asarray(bins, dtype=float)
    keep = 1.0 - bins if lengths is None else (1.0 - bins) ** lengths
    head = np.ones(bins.shape[:-1] + (1,))
    return (1.0 - q0)[..., None] * np.concatenate([head, np.cumprod(keep, axis=-1)], axis=-1)


def pch_delta(h, spec: BinSpec, gamma: float):
    """``gamma^{b_k} (1 - (gamma (1 - h_k))^{L_k}) / (1 - gamma (1 - h_k))``."""
    r = gamma * (1.0 - np.asarray(h, dtype=float))
    b = np.asarray(spec.edges[:-1], dtype=float)
    return gamma**b * (1.0 - r**spec.lengths) / (1.0 - r)


def binned_value(kind: str, q0, bins, tail, spec: BinSpec, gamma: float):
    """Plug-in value for arrays of binned hazards (leading dims are batch dims)."""
    gamma = check_gamma(gamma)
    bins = np.asarray(bins, dtype=float)
    tail = np.asarray(tail, dtype=float)
    if bins.shape[-1] != spec.K:
        raise ValueError(f"expected {spec.K} bin values, got {bins.shape[-1]}")
    H = spec.H
    if kind == "pcs":
        S = edge_survival(q0, bins)
        b = np.asarray(spec.edges[:-1], dtype=float)
        w = gamma**b * (1.0 - gamma**spec.lengths) / (1.0 - gamma)
        return -((S[..., :-1] * w).sum(-1) + gamma**H * S[..., -1] / (1.0 - gamma))
    S = edge_survival(q0, bins, spec.lengths)
    head = (pch_delta(bins, spec, gamma) * S[..., :-1]).sum(-1)
    if kind == "pch":
        return -(head + gamma**H * S[..., -1] / (1.0 - gamma * (1.0 - tail)))
    if kind == "finite":
        return -head
    raise ValueError(f"unknown estimator kind {kind!r}")


def pch_value(bh: BinnedHazard, spec: BinSpec, gamma: float) -> float:
    return float(binned_value("pch", bh.q0, bh.bin_values, bh.tail_value, spec, gamma))


def pcs_value(bh: BinnedHazard, spec: BinSpec, gamma: float) -> float:
    return float(binned_value("pcs", bh.q0, bh.bin_values, bh.tail_value, spec, gamma))


def value(bh: BinnedHazard, spec: BinSpec, gamma: float) -> float:
    return float(binned_value(bh.kind, bh.q0, bh.bin_values, bh.tail_value, spec, gamma))


def tuple_counts(spec: BinSpec, kind: str, tau, c, delta, out: Optional[tuple] = None):
    """Event and exposure counts per model output for a batch of observations.

    Returns ``(E, X)`` of shape ``(n, K + 2)`` ordered ``[q0, bins..., tail]``
    such that each log-likelihood is ``sum_j E_j log h_j + X_j log(1 - h_j)``.
    The counts do not depend on the hazards, which makes gradients and the
    closed-form tabular MLE straightforward.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown estimator kind {kind!r}")
    tau = np.asarray(tau, dtype=np.int64)
    c = np.asarray(c, dtype=np.int64)
    delta = np.asarray(delta, dtype=np.int64)
    n = len(delta)
    K, H = spec.K, spec.H
    edges = np.asarray(spec.edges, dtype=np.int64)
    L = spec.lengths
    E = np.zeros((n, K + 2))
    X = np.zeros((n, K + 2))

    ev = delta == 1
    E[ev & (tau == 0), 0] = 1.0
    # surviving step 0 is an exposure of q0
    X[(ev & (tau >= 1)) | (~ev & (c >= 1)), 0] = 1.0

    # shifted time on the binned process: t' = tau - 1 for events, c - 1 for censoring
    t = np.where(ev, tau - 1, c - 1)
    active = np.where(ev, tau >= 1, c >= 1)
    t = np.where(active, t, 0)
    in_tail = t >= H
    k = np.where(in_tail, K, np.searchsorted(edges, t, side="right") - 1)
    cols = np.arange(K)[None, :]

    if kind == "pcs":
        # censoring: only bins completed by t' count; events: bins before k(t')
        done = np.where(ev, k, np.minimum(np.searchsorted(edges, t, side="right") - 1, K))
        X[:, 1:K + 1] += (active[:, None] & (cols < done[:, None])) * 1.0
        rows = np.flatnonzero(active & ev)
        E[rows, 1 + k[rows]] = 1.0
        return E, X

    # PCH (and finite): t' = H under censoring means all H steps survived
    k_c = np.where(~ev & (t == H), K, k)
    m = np.where(k_c >= K, t - H, t - edges[np.minimum(k_c, K - 1)])
    X[:, 1:K + 1] += (active[:, None] & (cols < k_c[:, None])) * L[None, :]
    rows = np.flatnonzero(active)
    X[rows, 1 + k_c[rows]] += m[rows]
    rows = np.flatnonzero(active & ev)
    E[rows, 1 + k[rows]] = 1.0
    return E, X
