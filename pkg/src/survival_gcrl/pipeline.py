"""Experiment steps shared by the command line and the scripts.

Every step reads and writes plain files in an output directory and draws
randomness from streams derived from the run seed, so re-running a step
with the same config reproduces its files byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import config as cfgmod
from . import gridworld as gw
from . import hazard_net as hn
from . import hsvl_policy as hp
from .censored_likelihood import SurvivalDataset, fit_constant_hazard, relabel_dataset, simulate_geometric
from .grouped_time import KINDS, BinSpec, geometric_edges, uniform_edges
from .trainer import TrainConfig, fit_hazard, trace_to_csv

# independent random streams per step
DATA, TRAIN, POLICY, TASKS, ROLLOUT, SCALING = range(6)


def stream(seed: int, which: int) -> np.random.Generator:
    return np.random.default_rng([seed, which])


def _write(path, data) -> None:
    mode = "wb" if isinstance(data, bytes) else "w"
    try:
        with open(path, mode) as f:
            f.write(data)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror}") from None


def _read(path, binary=False):
    try:
        with open(path, "rb" if binary else "r") as f:
            return f.read()
    except OSError as e:
        raise OSError(f"cannot read {path}: {e.strerror}") from None


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# metrics


class MetricsLog:
    """Append-only metrics written as JSON lines and long-format CSV together.

    Steps must not decrease within a phase.
    """

    def __init__(self, out_dir: str, run_id: str):
        self.run_id = run_id
        self.jsonl = os.path.join(out_dir, "metrics.jsonl")
        self.csv = os.path.join(out_dir, "metrics.csv")
        self._last = {}
        if os.path.exists(self.jsonl):
            for line in _read(self.jsonl).splitlines():
                rec = json.loads(line)
                key = (rec["run_id"], rec["phase"])
                self._last[key] = max(self._last.get(key, -1), rec["step"])
        if not os.path.exists(self.csv):
            _write(self.csv, "run_id,phase,step,metric,value\n")

    def record(self, phase: str, step: int, **metrics) -> dict:
        key = (self.run_id, phase)
        if step < self._last.get(key, -1):
            raise ValueError(f"step {step} precedes step {self._last[key]} in phase {phase}")
        self._last[key] = step
        rec = {"run_id": self.run_id, "phase": phase, "step": int(step),
               "metrics": {k: float(v) for k, v in sorted(metrics.items())}}
        with open(self.jsonl, "a") as f:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(self.csv, "a", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            for k, v in rec["metrics"].items():
                w.writerow([self.run_id, phase, step, k, repr(v)])
        return rec


def reset_metrics(out_dir: str) -> None:
    for name in ("metrics.jsonl", "metrics.csv"):
        path = os.path.join(out_dir, name)
        if os.path.exists(path):
            os.remove(path)


def run_id(cfg: cfgmod.RunConfig, kind: Optional[str] = None) -> str:
    maze = os.path.splitext(os.path.basename(cfg.run.maze))[0]
    return f"{maze}-{kind or cfg.run.estimator}-s{cfg.run.seed}"


# building blocks


def build_mdp(cfg: cfgmod.RunConfig) -> gw.GridMdp:
    return gw.load_maze(cfg.run.maze, cfg.run.slip)


def behavior_policy(cfg: cfgmod.RunConfig, mdp: gw.GridMdp) -> gw.TabularPolicy:
    if cfg.data.behavior == "uniform":
        return gw.uniform_policy(mdp)
    return gw.noisy_optimal_policy(mdp, cfg.data.p_opt)


def bin_spec(cfg: cfgmod.RunConfig, kind: str) -> BinSpec:
    """Unit bins up to ``H`` for the finite-horizon kind, geometric bins otherwise."""
    if kind == "finite":
        return uniform_edges(cfg.bins.H)
    return geometric_edges(cfg.bins.K, cfg.bins.H)


def make_model(cfg: cfgmod.RunConfig, mdp: gw.GridMdp, kind: str) -> hn.HazardModel:
    spec = bin_spec(cfg, kind)
    if cfg.run.model == "tabular":
        return hn.TabularHazard(mdp.n_states, mdp.n_states, spec, kind)
    t = cfg.train
    return hn.LowRankHazardNet(gw.cell_features(mdp), spec, kind, t.hidden, t.n_basis,
                               t.rank, seed=cfg.run.seed)


def split(dataset: SurvivalDataset, holdout_frac: float):
    n_hold = int(round(holdout_frac * len(dataset)))
    cut = len(dataset) - n_hold
    return dataset[np.arange(cut)], dataset[np.arange(cut, len(dataset))]


def value_grid(model: hn.HazardModel, n: int, gamma: float) -> np.ndarray:
    S, G = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return model.values(S.ravel(), G.ravel(), gamma).reshape(n, n)


# steps


def generate(cfg: cfgmod.RunConfig, out: str) -> dict:
    """Behaviour trajectories and relabeled tuples plus a manifest."""
    os.makedirs(out, exist_ok=True)
    mdp = build_mdp(cfg)
    beh = behavior_policy(cfg, mdp)
    rng = stream(cfg.run.seed, DATA)
    trajs = gw.collect_trajectories(mdp, beh, cfg.data.n_traj, cfg.data.traj_len, rng)
    ds = relabel_dataset(trajs, cfg.data.n_tuples, cfg.relabel_config(), rng)
    blob = ds.to_bytes()
    _write(os.path.join(out, "dataset.csv"), ds.to_csv())
    _write(os.path.join(out, "dataset.bin"), blob)
    _write(os.path.join(out, "trajectories.csv"), gw.trajectories_to_csv(trajs))
    _write(os.path.join(out, "config.ini"), cfgmod.dumps(cfg))
    manifest = {
        "seed": cfg.run.seed,
        "maze": cfg.run.maze,
        "maze_sha256": mdp.fingerprint(),
        "n_states": mdp.n_states,
        "n_trajectories": len(trajs),
        "n_transitions": int(sum(len(t) - 1 for t in trajs)),
        "count": len(ds),
        "events": int(ds.delta.sum()),
        "censored": int(len(ds) - ds.delta.sum()),
        "dataset_sha256": hashlib.sha256(blob).hexdigest(),
    }
    _write(os.path.join(out, "manifest.json"), dump_json(manifest))
    MetricsLog(out, run_id(cfg)).record("generate", 0, count=len(ds),
                                        event_frac=float(ds.delta.mean()))
    return manifest


def load_dataset(out: str) -> SurvivalDataset:
    path = os.path.join(out, "dataset.bin")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no dataset at {path}; run generate first")
    return SurvivalDataset.from_bytes(_read(path, binary=True))


def train(cfg: cfgmod.RunConfig, out: str, kind: Optional[str] = None) -> dict:
    """Fit one estimator kind; writes ``model_<kind>.ckpt`` and ``loss_<kind>.csv``."""
    kind = kind or cfg.run.estimator
    mdp = build_mdp(cfg)
    ds = load_dataset(out)
    if ds.state.max(initial=0) >= mdp.n_states or ds.goal.max(initial=0) >= mdp.n_states:
        raise ValueError("dataset ids exceed the maze size; was it generated for another maze?")
    fit_set, hold = split(ds, cfg.data.holdout_frac)
    model = make_model(cfg, mdp, kind)
    spec = model.spec
    log = MetricsLog(out, run_id(cfg, kind))
    if cfg.train.fit == "closed_form":
        full = hn.CountBatch.from_dataset(fit_set, spec, kind)
        held = hn.CountBatch.from_dataset(hold, spec, kind) if len(hold) else None

        def score(b):
            return math.nan if b is None else hn.count_nll(model.logits(b.states, b.goals), b.E, b.X, b.n)[0]

        trace = [(0, score(full), score(held))]
        model.fit_closed_form(fit_set)
        trace.append((1, score(full), score(held)))
    else:
        t = cfg.train
        tc = TrainConfig(t.batch_size, t.total_steps, t.learning_rate,
                         int(stream(cfg.run.seed, TRAIN).integers(2**31)), t.eval_every)
        trace = fit_hazard(model, fit_set, spec, tc, hold if len(hold) else None).trace
    for step, tr, ho in trace:
        if not (math.isfinite(tr) and (math.isnan(ho) or math.isfinite(ho))):
            raise FloatingPointError(f"non-finite loss at step {step}")
        log.record("train", step, train_nll=tr, holdout_nll=ho)
    _write(os.path.join(out, f"model_{kind}.ckpt"), model.to_bytes())
    _write(os.path.join(out, f"loss_{kind}.csv"), trace_to_csv(trace))
    return {"kind": kind, "final_train_nll": trace[-1][1], "final_holdout_nll": trace[-1][2]}


def load_model(out: str, kind: str, mdp: gw.GridMdp) -> hn.HazardModel:
    path = os.path.join(out, f"model_{kind}.ckpt")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no checkpoint at {path}; run train first")
    model = hn.from_bytes(_read(path, binary=True))
    if model.kind != kind:
        raise ValueError(f"checkpoint {path} holds a {model.kind} model, expected {kind}")
    n = mdp.n_states
    if isinstance(model, hn.TabularHazard) and model.params["logits"].shape[:2] != (n, n):
        raise ValueError(f"checkpoint covers {model.params['logits'].shape[:2]} pairs, maze has {n} states")
    if isinstance(model, hn.LowRankHazardNet) and len(model.features) != n:
        raise ValueError(f"checkpoint features cover {len(model.features)} states, maze has {n}")
    return model


@dataclass
class EvalContext:
    """Everything evaluation needs that does not depend on the estimator."""

    mdp: gw.GridMdp
    behavior: gw.TabularPolicy
    V_oracle: np.ndarray
    trajs: list
    tasks: tuple


def eval_context(cfg: cfgmod.RunConfig, out: str) -> EvalContext:
    mdp = build_mdp(cfg)
    beh = behavior_policy(cfg, mdp)
    path = os.path.join(out, "trajectories.csv")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no trajectories at {path}; run generate first")
    trajs = gw.trajectories_from_csv(_read(path))
    tasks = hp.sample_tasks(mdp, cfg.eval.episodes, stream(cfg.run.seed, TASKS))
    return EvalContext(mdp, beh, gw.value_table(mdp, beh, cfg.run.gamma), trajs, tasks)


def success(cfg, ctx: EvalContext, policy) -> float:
    st, go, d = ctx.tasks
    return hp.success_rate(ctx.mdp, policy, st, go, d, stream(cfg.run.seed, ROLLOUT),
                           cfg.eval.budget_factor)


def evaluate(cfg: cfgmod.RunConfig, out: str, kind: Optional[str] = None,
             ctx: Optional[EvalContext] = None) -> dict:
    """Value error against the exact oracle and success of the extracted policy."""
    kind = kind or cfg.run.estimator
    ctx = ctx or eval_context(cfg, out)
    mdp, n = ctx.mdp, ctx.mdp.n_states
    model = load_model(out, kind, mdp)
    V = value_grid(model, n, cfg.run.gamma)
    rel = np.abs(V - ctx.V_oracle) / np.abs(ctx.V_oracle)
    a = cfg.awr
    pol = hp.fit_flat_policy(ctx.trajs, V, hp.AwrConfig(a.beta, a.subgoal_step, a.weight_clip),
                             n, mdp.n_actions, stream(cfg.run.seed, POLICY), a.goals_per_step)
    _write(os.path.join(out, f"policy_{kind}.ckpt"), hp.policy_to_bytes(pol))
    _write(os.path.join(out, f"values_{kind}.bin"), np.ascontiguousarray(V, "<f8").tobytes())
    metrics = {
        "value_mean_rel_err": float(rel.mean()),
        "value_max_rel_err": float(rel.max()),
        "value_mean_abs_err": float(np.abs(V - ctx.V_oracle).mean()),
        "success_greedy": success(cfg, ctx, hp.greedy(pol)),
        "success_behavior": success(cfg, ctx, ctx.behavior),
    }
    MetricsLog(out, run_id(cfg, kind)).record("evaluate", 0, **metrics)
    result = {"kind": kind, "episodes": cfg.eval.episodes, **metrics}
    _write(os.path.join(out, f"eval_{kind}.json"), dump_json(result))
    return result


def estimator_deltas(out: str, results: dict, n: int) -> dict:
    """Pairwise success-rate gaps and mean absolute value gaps between kinds."""
    kinds = sorted(results)
    vals = {k: np.frombuffer(_read(os.path.join(out, f"values_{k}.bin"), binary=True),
                             dtype="<f8").reshape(n, n) for k in kinds}
    deltas = {}
    for i, a in enumerate(kinds):
        for b in kinds[i + 1:]:
            deltas[f"{a}-{b}"] = {
                "success_gap": results[a]["success_greedy"] - results[b]["success_greedy"],
                "value_mean_abs_gap": float(np.abs(vals[a] - vals[b]).mean()),
            }
    return deltas


def end2end(cfg: cfgmod.RunConfig, out: str) -> dict:
    """Generate, then train and evaluate every estimator kind on the same data."""
    os.makedirs(out, exist_ok=True)
    reset_metrics(out)
    manifest = generate(cfg, out)
    ctx = eval_context(cfg, out)
    results = {}
    for kind in KINDS:
        train(cfg, out, kind)
        results[kind] = evaluate(cfg, out, kind, ctx)
    deltas = estimator_deltas(out, results, ctx.mdp.n_states)
    rates = [r["success_greedy"] for r in results.values()]
    summary = {"manifest": manifest, "estimators": results, "deltas": deltas,
               "max_success_spread": max(rates) - min(rates)}
    _write(os.path.join(out, "metrics.json"), dump_json(summary))
    return summary


# consistency sweep


def scaling_sweep(h_star: float, ns, censor_frac: float, reps: int,
                  rng: np.random.Generator) -> dict:
    """RMSE of the censored MLE of a constant hazard against sample size.

    Also reports the fit that drops censored tuples, which is biased upward.
    """
    rmse, rmse_drop = [], []
    for n in ns:
        err, err_drop = np.empty(reps), np.empty(reps)
        for r in range(reps):
            ds = simulate_geometric(h_star, int(n), rng, censor_frac)
            err[r] = fit_constant_hazard(ds) - h_star
            events = ds[np.flatnonzero(ds.delta == 1)]
            err_drop[r] = fit_constant_hazard(events) - h_star if len(events) else 1.0 - h_star
        rmse.append(float(np.sqrt(np.mean(err**2))))
        rmse_drop.append(float(np.sqrt(np.mean(err_drop**2))))
    slope = float(np.polyfit(np.log(ns), np.log(rmse), 1)[0])
    return {"ns": [int(n) for n in ns], "rmse": rmse, "rmse_censoring_ignored": rmse_drop,
            "slope": slope}


def scaling(cfg: cfgmod.RunConfig, out: str) -> dict:
    os.makedirs(out, exist_ok=True)
    s = cfg.scaling
    res = scaling_sweep(s.h_star, s.ns, s.censor_frac, s.reps, stream(cfg.run.seed, SCALING))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "rmse", "rmse_censoring_ignored"])
    for row in zip(res["ns"], res["rmse"], res["rmse_censoring_ignored"]):
        w.writerow([row[0], repr(row[1]), repr(row[2])])
    buf.write(f"# slope,{res['slope']!r}\n")
    _write(os.path.join(out, "scaling.csv"), buf.getvalue())
    _write(os.path.join(out, "scaling.json"), dump_json(res))
    log = MetricsLog(out, f"scaling-s{cfg.run.seed}")
    for n, e, e2 in zip(res["ns"], res["rmse"], res["rmse_censoring_ignored"]):
        log.record("scaling", n, rmse=e, rmse_censoring_ignored=e2)
    return res
