"""Train finite, PCH and PCS hazards on one dataset and compare values and success."""

import argparse

from survival_gcrl import config as cfgmod
from survival_gcrl import pipeline

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--config")
p.add_argument("--out", default="runs/compare")
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
cfg = cfg.replace(run={"seed": args.seed, "out": args.out})
summary = pipeline.end2end(cfg, args.out)

print(f"{'kind':<8} {'mean rel err':>12} {'success':>8}")
for kind, r in sorted(summary["estimators"].items()):
    print(f"{kind:<8} {r['value_mean_rel_err']:>12.4f} {r['success_greedy']:>8.3f}")
beh = next(iter(summary["estimators"].values()))["success_behavior"]
print(f"{'behavior':<8} {'':>12} {beh:>8.3f}")
print(f"max success spread {summary['max_success_spread']:.3f}")
for pair, d in sorted(summary["deltas"].items()):
    print(f"{pair:<12} success gap {d['success_gap']:+.3f}  value gap {d['value_mean_abs_gap']:.4f}")
