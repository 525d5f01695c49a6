"""Run configuration: nested dataclasses stored as a sectioned key-value file.

Unknown sections or keys are rejected, and ``loads(dumps(cfg)) == cfg``.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Tuple

from .censored_likelihood import RelabelConfig
from .grouped_time import KINDS
from .gridworld import MAZES


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    maze: str = "maze10"
    slip: float = 0.6
    seed: int = 0
    out: str = "runs/default"
    estimator: str = "pcs"
    model: str = "tabular"  # tabular | lowrank
    gamma: float = 0.95


@dataclass
class BinSection:
    K: int = 32
    H: int = 256


@dataclass
class DataSection:
    behavior: str = "noisy_optimal"  # noisy_optimal | uniform
    p_opt: float = 0.8
    n_traj: int = 1000
    traj_len: int = 200
    n_tuples: int = 300_000
    holdout_frac: float = 0.1


@dataclass
class RelabelSection:
    p_cur: float = 0.08
    p_traj: float = 0.6
    p_rand: float = 0.32


@dataclass
class TrainSection:
    fit: str = "closed_form"  # closed_form | adam
    batch_size: int = 1024
    total_steps: int = 2000
    learning_rate: float = 3e-4
    eval_every: int = 100
    hidden: Tuple[int, ...] = (64, 64)
    n_basis: int = 4
    rank: int = 8


@dataclass
class AwrSection:
    beta: float = 3.0
    subgoal_step: int = 5
    weight_clip: float = 100.0
    goals_per_step: int = 4


@dataclass
class EvalSection:
    episodes: int = 10_000
    budget_factor: int = 4


@dataclass
class ScalingSection:
    h_star: float = 0.3
    censor_frac: float = 0.3
    ns: Tuple[int, ...] = (100, 1000, 10_000, 100_000)
    reps: int = 200


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    bins: BinSection = field(default_factory=BinSection)
    data: DataSection = field(default_factory=DataSection)
    relabel: RelabelSection = field(default_factory=RelabelSection)
    train: TrainSection = field(default_factory=TrainSection)
    awr: AwrSection = field(default_factory=AwrSection)
    eval: EvalSection = field(default_factory=EvalSection)
    scaling: ScalingSection = field(default_factory=ScalingSection)

    def relabel_config(self) -> RelabelConfig:
        r = self.relabel
        return RelabelConfig(r.p_cur, r.p_traj, r.p_rand)

    def replace(self, **sections) -> "RunConfig":
        """Copy with fields of named sections overridden, e.g. ``run={"seed": 3}``."""
        parts = {}
        for f in dataclasses.fields(self):
            sec = getattr(self, f.name)
            parts[f.name] = dataclasses.replace(sec, **sections.get(f.name, {}))
        cfg = RunConfig(**parts)
        validate(cfg)
        return cfg


def validate(cfg: RunConfig) -> None:
    r = cfg.run
    if r.estimator not in KINDS:
        raise ConfigError(f"run.estimator must be one of {KINDS}, got {r.estimator!r}")
    if r.model not in ("tabular", "lowrank"):
        raise ConfigError(f"run.model must be tabular or lowrank, got {r.model!r}")
    if r.maze not in MAZES and not os.path.isfile(r.maze):
        raise ConfigError(f"run.maze: no built-in maze or file named {r.maze!r}")
    if not 0.0 < r.gamma < 1.0:
        raise ConfigError("run.gamma must lie in (0, 1)")
    if not 0.0 <= r.slip <= 1.0:
        raise ConfigError("run.slip must lie in [0, 1]")
    if not 1 <= cfg.bins.K <= cfg.bins.H:
        raise ConfigError("bins need 1 <= K <= H")
    d = cfg.data
    if d.behavior not in ("noisy_optimal", "uniform"):
        raise ConfigError(f"data.behavior must be noisy_optimal or uniform, got {d.behavior!r}")
    if not 0.0 <= d.p_opt <= 1.0 or not 0.0 <= d.holdout_frac < 1.0:
        raise ConfigError("data.p_opt must lie in [0, 1] and data.holdout_frac in [0, 1)")
    if d.n_traj < 1 or d.traj_len < 1 or d.n_tuples < 1:
        raise ConfigError("data sizes must be positive")
    if cfg.train.fit not in ("closed_form", "adam"):
        raise ConfigError(f"train.fit must be closed_form or adam, got {cfg.train.fit!r}")
    if cfg.train.fit == "closed_form" and r.model != "tabular":
        raise ConfigError("closed-form fitting needs run.model = tabular")
    if cfg.eval.episodes < 1 or cfg.eval.budget_factor < 1:
        raise ConfigError("eval.episodes and eval.budget_factor must be positive")
    s = cfg.scaling
    if not 0.0 < s.h_star < 1.0 or not 0.0 <= s.censor_frac < 1.0 or s.reps < 2:
        raise ConfigError("scaling needs 0 < h_star < 1, 0 <= censor_frac < 1 and reps >= 2")
    if len(s.ns) < 2 or any(n < 1 for n in s.ns):
        raise ConfigError("scaling.ns needs at least two positive sizes")
    try:
        cfg.relabel_config()
    except ValueError as e:
        raise ConfigError(f"relabel: {e}") from None
    if cfg.awr.beta <= 0 or cfg.awr.subgoal_step < 1 or cfg.awr.weight_clip <= 0:
        raise ConfigError("awr needs beta > 0, subgoal_step >= 1 and weight_clip > 0")
    if cfg.awr.goals_per_step < 1:
        raise ConfigError("awr.goals_per_step must be positive")


def _format(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, proto, where: str):
    try:
        if isinstance(proto, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if isinstance(proto, bool):
            return raw.strip().lower() in ("1", "true", "yes")
        if isinstance(proto, int):
            return int(raw)
        if isinstance(proto, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(proto).__name__}") from None


def dumps(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        sec = getattr(cfg, f.name)
        lines.append(f"[{f.name}]")
        lines += [f"{g.name} = {_format(getattr(sec, g.name))}" for g in dataclasses.fields(sec)]
        lines.append("")
    return "\n".join(lines)


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case (K, H)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    base = RunConfig()
    known = {f.name for f in dataclasses.fields(base)}
    for name in parser.sections():
        if name not in known:
            raise ConfigError(f"unknown section [{name}]")
    parts = {}
    for f in dataclasses.fields(base):
        sec = getattr(base, f.name)
        keys = {g.name for g in dataclasses.fields(sec)}
        vals = {}
        if parser.has_section(f.name):
            for key, raw in parser.items(f.name):
                if key not in keys:
                    raise ConfigError(f"unknown key {f.name}.{key}")
                vals[key] = _parse(raw, getattr(sec, key), f"{f.name}.{key}")
        parts[f.name] = dataclasses.replace(sec, **vals)
    cfg = RunConfig(**parts)
    validate(cfg)
    return cfg


def load(path) -> RunConfig:
    try:
        with open(path) as f:
            return loads(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
