"""Success of flat AWR on learned PCS values against the behaviour policy, over seeds."""

import argparse
import os

from survival_gcrl import config as cfgmod
from survival_gcrl import pipeline

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--config")
p.add_argument("--out", default="runs/improvement")
p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
args = p.parse_args()

base = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
for seed in args.seeds:
    out = os.path.join(args.out, f"seed{seed}")
    cfg = base.replace(run={"seed": seed, "out": out, "estimator": "pcs"})
    pipeline.generate(cfg, out)
    pipeline.train(cfg, out)
    r = pipeline.evaluate(cfg, out)
    gain = r["success_greedy"] - r["success_behavior"]
    print(f"seed {seed}: awr {r['success_greedy']:.3f}  behavior {r['success_behavior']:.3f}  "
          f"gain {gain:+.3f}")
