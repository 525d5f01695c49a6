"""Fit a tabular hazard on relabeled maze data and report value error against the oracle."""

import argparse

from survival_gcrl import config as cfgmod
from survival_gcrl import pipeline

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--maze", default="maze6")
p.add_argument("--gamma", type=float, default=0.9)
p.add_argument("--tuples", type=int, default=100_000)
p.add_argument("--out", default="runs/recovery")
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

cfg = cfgmod.RunConfig().replace(
    run=dict(maze=args.maze, slip=0.0, gamma=args.gamma, seed=args.seed, out=args.out),
    data=dict(behavior="uniform", n_traj=200, traj_len=1000, n_tuples=args.tuples, holdout_frac=0.0),
    eval=dict(episodes=1000),
)
pipeline.generate(cfg, args.out)
for kind in ("finite", "pch", "pcs"):
    pipeline.train(cfg, args.out, kind)
    r = pipeline.evaluate(cfg, args.out, kind)
    print(f"{kind:<7} mean rel err {r['value_mean_rel_err']:.4f}  max {r['value_max_rel_err']:.4f}")
