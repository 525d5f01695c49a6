"""Command line: ``python -m survival_gcrl <verb> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import config as cfgmod
from . import pipeline
from .grouped_time import KINDS

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
VERBS = ("generate", "train", "evaluate", "scaling", "end2end")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="survival_gcrl", description="Survival value learning experiments on gridworlds.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb in VERBS:
        s = sub.add_parser(verb)
        s.add_argument("--config", help="run config file (sectioned key = value)")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--maze", help="built-in maze name or maze text file")
        s.add_argument("--estimator", choices=KINDS)
    return p


def resolve_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    run = {k: v for k, v in (("seed", args.seed), ("out", args.out), ("maze", args.maze),
                             ("estimator", args.estimator)) if v is not None}
    return cfg.replace(run=run)


def dispatch(verb: str, cfg: cfgmod.RunConfig):
    out = cfg.run.out
    if verb == "generate":
        return pipeline.generate(cfg, out)
    if verb == "train":
        return pipeline.train(cfg, out)
    if verb == "evaluate":
        return pipeline.evaluate(cfg, out)
    if verb == "scaling":
        return pipeline.scaling(cfg, out)
    summary = pipeline.end2end(cfg, out)
    return {k: summary[k] for k in ("estimators", "deltas", "max_success_spread")}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except cfgmod.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = dispatch(args.verb, cfg)
    except (OSError, ValueError, FloatingPointError) as e:
        print(f"{args.verb} failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(result, sort_keys=True, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
