"""Adam and minibatch fitting of hazard models."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grouped_time import BinSpec
from .hazard_net import CountBatch, HazardModel, count_nll, nll_grad

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at batch {step}")
        self.step = step
        self.loss = loss


@dataclass
class OptState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, opt: OptState) -> OptState:
    """Bias-corrected Adam update, in place on ``params``."""
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}")
    opt.step += 1
    bc1 = 1.0 - opt.beta1**opt.step
    bc2 = 1.0 - opt.beta2**opt.step
    for k, g in grads.items():
        if k not in opt.m:
            opt.m[k] = np.zeros_like(g)
            opt.v[k] = np.zeros_like(g)
        m, v = opt.m[k], opt.v[k]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        params[k] -= opt.lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return opt


@dataclass
class TrainConfig:
    batch_size: int = 1024  # 0 trains on the full dataset every step
    total_steps: int = 2000
    learning_rate: float = 3e-4
    seed: int = 0
    eval_every: int = 100

    def __post_init__(self):
        if self.batch_size < 0 or self.total_steps < 0 or self.eval_every < 1:
            raise ValueError("batch_size, total_steps and eval_every must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class FitResult:
    model: HazardModel
    trace: list  # (step, train_nll, holdout_nll)
    batch_losses: np.ndarray


def _eval(model, batch: Optional[CountBatch]) -> float:
    if batch is None:
        return math.nan
    return count_nll(model.logits(batch.states, batch.goals), batch.E, batch.X, batch.n)[0]


def fit_hazard(model: HazardModel, dataset, spec: Optional[BinSpec] = None,
               cfg: Optional[TrainConfig] = None, holdout=None) -> FitResult:
    """Minimise the mean censored NLL of ``dataset`` with Adam.

    Minibatches are drawn with replacement from a generator seeded by
    ``cfg.seed``; identical inputs give identical traces.
    """
    cfg = cfg or TrainConfig()
    spec = spec or model.spec
    if len(dataset) == 0:
        raise ValueError("cannot fit on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    kind = model.kind
    full = CountBatch.from_dataset(dataset, spec, kind)
    held = CountBatch.from_dataset(holdout, spec, kind) if holdout is not None and len(holdout) else None
    per_tuple = None
    if cfg.batch_size and cfg.batch_size < len(dataset):
        per_tuple = CountBatch.from_dataset(dataset, spec, kind, merge=False)
    opt = OptState(lr=cfg.learning_rate)
    trace = [(0, _eval(model, full), _eval(model, held))]
    losses = np.empty(cfg.total_steps)
    for step in range(1, cfg.total_steps + 1):
        if per_tuple is None:
            batch = full
        else:
            idx = rng.integers(0, len(dataset), size=cfg.batch_size)
            batch = CountBatch(per_tuple.states[idx], per_tuple.goals[idx],
                               per_tuple.E[idx], per_tuple.X[idx], cfg.batch_size)
        loss, grads = nll_grad(model, batch, spec, kind)
        if not math.isfinite(loss):
            raise TrainingDiverged(step, loss)
        losses[step - 1] = loss
        adam_step(model.params, grads, opt)
        if step % cfg.eval_every == 0 or step == cfg.total_steps:
            trace.append((step, _eval(model, full), _eval(model, held)))
            log.debug("step %d train_nll %.6f", step, trace[-1][1])
    return FitResult(model, trace, losses)


def trace_to_csv(trace) -> str:
    lines = ["step,train_nll,holdout_nll"]
    lines += [f"{s},{a!r},{b!r}" for s, a, b in trace]
    return "\n".join(lines) + "\n"
