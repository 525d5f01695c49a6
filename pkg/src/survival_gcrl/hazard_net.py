"""Parametric hazard models with hand-derived reverse-mode gradients.

Every model maps a batch of ``(state, goal)`` inputs to ``K + 2`` logits
ordered ``[immediate hit, K bins, tail]``; the logistic function turns them
into ``q0``, the bin values and the tail value of a :class:`BinnedHazard`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit, ndtr

from . import checkpoint
from .grouped_time import KINDS, BinnedHazard, BinSpec, binned_value, tuple_counts

L0_BIAS = -2.0


def gelu(x):
    return x * ndtr(x)


def gelu_grad(x):
    return ndtr(x) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


@dataclass
class CountBatch:
    """Observations reduced to per-input event/exposure counts.

    ``n`` is the number of raw tuples, used to turn sums into means.
    """

    states: np.ndarray
    goals: np.ndarray
    E: np.ndarray
    X: np.ndarray
    n: int

    @classmethod
    def from_dataset(cls, dataset, spec: BinSpec, kind: str, merge: bool = True) -> "CountBatch":
        if len(dataset) == 0:
            raise ValueError("empty batch")
        E, X = tuple_counts(spec, kind, dataset.tau, dataset.c, dataset.delta)
        states, goals = dataset.state, dataset.goal
        if merge:
            keys = np.stack([states, goals], axis=1)
            uniq, inv = np.unique(keys, axis=0, return_inverse=True)
            inv = inv.ravel()
            Eu = np.zeros((len(uniq), E.shape[1]))
            Xu = np.zeros_like(Eu)
            np.add.at(Eu, inv, E)
            np.add.at(Xu, inv, X)
            return cls(uniq[:, 0], uniq[:, 1], Eu, Xu, len(dataset))
        return cls(states, goals, E, X, len(dataset))


def count_nll(logits, E, X, n: int):
    """Mean NLL ``-sum(E log h + X log(1 - h)) / n`` and its gradient in the logits."""
    loss = -(E * log_expit(logits) + X * log_expit(-logits)).sum() / n
    grad = ((E + X) * expit(logits) - E) / n
    return float(loss), grad


class HazardModel:
    """Shared plumbing: parameters live in ``self.params`` (name -> float64 array)."""

    kind: str
    spec: BinSpec
    params: dict

    def logits(self, states, goals) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dlogits) -> dict:
        """Gradients of ``sum(dlogits * logits)`` for the last :meth:`logits` call."""
        raise NotImplementedError

    def forward(self, state, goal) -> BinnedHazard:
        lg = self.logits(np.atleast_1d(state), np.atleast_1d(goal))[0]
        p = expit(lg)
        return BinnedHazard(self.kind, p[1:-1], float(p[-1]), float(p[0]))

    def hazards(self, states, goals):
        """``(q0, bins, tail)`` arrays for a batch."""
        p = expit(self.logits(np.asarray(states), np.asarray(goals)))
        return p[:, 0], p[:, 1:-1], p[:, -1]

    def values(self, states, goals, gamma: float, kind: Optional[str] = None) -> np.ndarray:
        q0, bins, tail = self.hazards(states, goals)
        return binned_value(kind or self.kind, q0, bins, tail, self.spec, gamma)

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def n_outputs(self) -> int:
        return self.spec.K + 2

    def meta(self) -> dict:
        return {"kind": self.kind, "edges": list(self.spec.edges)}

    def to_bytes(self) -> bytes:
        return checkpoint.dumps(self.params, self.meta())


def value_of(model: HazardModel, state, goal, gamma: float) -> float:
    return float(model.values(np.atleast_1d(state), np.atleast_1d(goal), gamma)[0])


def nll_grad(model: HazardModel, batch, spec: Optional[BinSpec] = None,
             kind: Optional[str] = None):
    """Mean censored NLL of ``batch`` and its gradient for every parameter.

    ``batch`` is a :class:`SurvivalDataset` or a prepared :class:`CountBatch`.
    ``kind="finite"`` (the unbinned likelihood on the expanded per-step curve)
    shares its counts with PCH.
    """
    spec = spec or model.spec
    kind = kind or model.kind
    if not isinstance(batch, CountBatch):
        batch = CountBatch.from_dataset(batch, spec, kind)
    lg = model.logits(batch.states, batch.goals)
    if lg.shape[1] != batch.E.shape[1]:
        raise ValueError(f"model emits {lg.shape[1]} logits, counts have {batch.E.shape[1]}")
    loss, dlg = count_nll(lg, batch.E, batch.X, batch.n)
    return loss, model.backward(dlg)


# tabular


class TabularHazard(HazardModel):
    """One free logit vector per ``(state, goal)`` pair."""

    def __init__(self, n_states: int, n_goals: int, spec: BinSpec, kind: str = "pcs"):
        if kind not in KINDS:
            raise ValueError(f"unknown estimator kind {kind!r}")
        self.kind, self.spec = kind, spec
        logits = np.zeros((n_states, n_goals, spec.K + 2))
        logits[..., 0] = L0_BIAS
        self.params = {"logits": logits}

    def logits(self, states, goals):
        states = np.asarray(states, dtype=np.int64)
        goals = np.asarray(goals, dtype=np.int64)
        n_s, n_g, _ = self.params["logits"].shape
        if np.any((states < 0) | (states >= n_s) | (goals < 0) | (goals >= n_g)):
            raise ValueError("state or goal id out of range")
        self._cache = (states, goals)
        return self.params["logits"][states, goals]

    def backward(self, dlogits):
        states, goals = self._cache
        g = np.zeros_like(self.params["logits"])
        np.add.at(g, (states, goals), dlogits)
        return {"logits": g}

    def fit_closed_form(self, dataset) -> None:
        """Set each logit to the counting MLE ``E / (E + X)`` where data exist."""
        batch = CountBatch.from_dataset(dataset, self.spec, self.kind)
        tot = batch.E + batch.X
        seen = tot > 0
        p = np.clip(np.divide(batch.E, tot, out=np.zeros_like(tot), where=seen), 1e-6, 1 - 1e-6)
        lg = self.params["logits"][batch.states, batch.goals]
        lg[seen] = np.log(p[seen]) - np.log1p(-p[seen])
        self.params["logits"][batch.states, batch.goals] = lg

    def meta(self):
        n_s, n_g, _ = self.params["logits"].shape
        return {**super().meta(), "model": "tabular", "n_states": n_s, "n_goals": n_g}


class ConstantHazard(HazardModel):
    """A single logit shared by every output: a time-constant hazard."""

    def __init__(self, spec: BinSpec, kind: str = "pch"):
        self.kind, self.spec = kind, spec
        self.params = {"logit": np.zeros(1)}

    def logits(self, states, goals):
        self._n = len(np.atleast_1d(states))
        return np.full((self._n, self.spec.K + 2), self.params["logit"][0])

    def backward(self, dlogits):
        return {"logit": np.array([dlogits.sum()])}

    def meta(self):
        return {**super().meta(), "model": "constant"}


# conditioned low-rank basis network


class LowRankHazardNet(HazardModel):
    """MLP encoder with three heads mixed through a shared basis library.

    ``logit(t) = sum_j w_j(z) (c(z)^T psi_j(t)) + b_t`` for the ``K`` bins and
    the tail, plus a separate immediate-hit logit ``l0(z)``.  Inputs are ids
    looked up in ``features`` (one row per id) concatenated as ``[f(s), f(g)]``.
    """

    def __init__(self, features: np.ndarray, spec: BinSpec, kind: str = "pcs",
                 hidden: Sequence[int] = (64, 64), n_basis: int = 4, rank: int = 8,
                 seed: int = 0):
        if kind not in KINDS:
            raise ValueError(f"unknown estimator kind {kind!r}")
        self.kind, self.spec = kind, spec
        self.features = np.asarray(features, dtype=float)
        self.hidden = tuple(int(h) for h in hidden)
        self.n_basis, self.rank = int(n_basis), int(rank)
        rng = np.random.default_rng(seed)
        T = spec.K + 1
        d = 2 * self.features.shape[1]
        p = {}

        def dense(name, fan_in, fan_out):
            lim = np.sqrt(3.0 / fan_in)
            p[name + ".W"] = rng.uniform(-lim, lim, size=(fan_in, fan_out))
            p[name + ".b"] = np.zeros(fan_out)

        for i, width in enumerate(self.hidden):
            dense(f"enc{i}", d, width)
            d = width
        dense("select", d, self.n_basis)
        dense("coeff", d, self.rank)
        dense("hit", d, 1)
        p["hit.b"][:] = L0_BIAS
        p["psi"] = rng.normal(0.0, 0.1, size=(self.n_basis, T, self.rank))
        p["time_bias"] = np.zeros(T)
        self.params = p

    def encode(self, states, goals):
        states = np.asarray(states, dtype=np.int64)
        goals = np.asarray(goals, dtype=np.int64)
        n = len(self.features)
        if np.any((states < 0) | (states >= n) | (goals < 0) | (goals >= n)):
            raise ValueError("input id out of range for the feature table")
        return np.concatenate([self.features[states], self.features[goals]], axis=1)

    def logits(self, states, goals):
        return self.logits_from_inputs(self.encode(states, goals))

    def logits_from_inputs(self, x):
        p = self.params
        x = np.asarray(x, dtype=float)
        width = p["enc0.W" if self.hidden else "select.W"].shape[0]
        if x.ndim != 2 or x.shape[1] != width:
            raise ValueError(f"expected inputs of width {width}, got {x.shape}")
        acts = [x]
        pre = []
        h = x
        for i in range(len(self.hidden)):
            a = h @ p[f"enc{i}.W"] + p[f"enc{i}.b"]
            pre.append(a)
            h = gelu(a)
            acts.append(h)
        w = h @ p["select.W"] + p["select.b"]
        c = h @ p["coeff.W"] + p["coeff.b"]
        l0 = h @ p["hit.W"] + p["hit.b"]
        A = np.einsum("jtr,br->bjt", p["psi"], c)
        # sorting the per-basis terms makes the sum over j independent of basis order
        lb = np.sort(w[:, :, None] * A, axis=1).sum(axis=1) + p["time_bias"]
        self._cache = (acts, pre, w, c, A)
        return np.concatenate([l0, lb], axis=1)

    def backward(self, dlogits):
        p = self.params
        acts, pre, w, c, A = self._cache
        z = acts[-1]
        g0, gb = dlogits[:, :1], dlogits[:, 1:]
        grads = {"time_bias": gb.sum(0)}
        dw = np.einsum("bt,bjt->bj", gb, A)
        dA = gb[:, None, :] * w[:, :, None]
        grads["psi"] = np.einsum("bjt,br->jtr", dA, c)
        dc = np.einsum("bjt,jtr->br", dA, p["psi"])
        dz = np.zeros_like(z)
        for name, d in (("select", dw), ("coeff", dc), ("hit", g0)):
            grads[name + ".W"] = z.T @ d
            grads[name + ".b"] = d.sum(0)
            dz += d @ p[name + ".W"].T
        for i in reversed(range(len(self.hidden))):
            da = dz * gelu_grad(pre[i])
            grads[f"enc{i}.W"] = acts[i].T @ da
            grads[f"enc{i}.b"] = da.sum(0)
            dz = da @ p[f"enc{i}.W"].T
        return {k: grads[k] for k in p}

    def meta(self):
        return {**super().meta(), "model": "lowrank", "hidden": list(self.hidden),
                "n_basis": self.n_basis, "rank": self.rank}

    def to_bytes(self) -> bytes:
        return checkpoint.dumps({**self.params, "_features": self.features}, self.meta())


def from_bytes(data: bytes) -> HazardModel:
    arrays, meta = checkpoint.loads(data)
    spec = BinSpec(tuple(meta["edges"]))
    kind = meta["kind"]
    if meta["model"] == "tabular":
        model = TabularHazard(meta["n_states"], meta["n_goals"], spec, kind)
    elif meta["model"] == "constant":
        model = ConstantHazard(spec, kind)
    elif meta["model"] == "lowrank":
        model = LowRankHazardNet(arrays.pop("_features"), spec, kind, meta["hidden"],
                                 meta["n_basis"], meta["rank"])
    else:
        raise ValueError(f"unknown model type {meta['model']!r}")
    if set(arrays) != set(model.params):
        raise ValueError("checkpoint parameters do not match the model layout")
    for k, v in arrays.items():
        if v.shape != model.params[k].shape:
            raise ValueError(f"shape mismatch for {k}: {v.shape} vs {model.params[k].shape}")
        model.params[k] = v
    return model
