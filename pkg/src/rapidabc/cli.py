"""Command line entry point: ``rapidabc {simulate,infer,bench-alpha}``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .experiments import (
    KINDS,
    METHODS,
    ExperimentConfig,
    bench_alpha,
    bench_summary,
    load_reference,
    preset,
    run_experiment,
    simulate_forwards,
)
from .samplers import ConfigError

_INFER_KINDS = tuple(k for k in KINDS if k.endswith("-infer"))


def _config(args, default_kind: str) -> ExperimentConfig:
    kind = args.experiment or default_kind
    cfg = preset(kind, args.preset, getattr(args, "target", None) or "")
    if args.config:
        cfg = ExperimentConfig.read(args.config, base=cfg)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "method", None):
        overrides["method"] = args.method
    if getattr(args, "approx_only", False):
        overrides["approx_only"] = True
    if getattr(args, "target", None):
        overrides["target"] = args.target
    if getattr(args, "reference", None):
        overrides["reference"] = args.reference
    return replace(cfg, **overrides)


def _common(p: argparse.ArgumentParser, kinds, default):
    p.add_argument("--config", metavar="PATH", help="INI file; its keys override the preset")
    p.add_argument("--seed", type=int, help="64-bit run seed")
    p.add_argument("--out", metavar="DIR", default="results", help="output directory")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--experiment", choices=kinds, default=None,
                   help=f"experiment kind (default {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rapidabc", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    sim = sub.add_parser("simulate", help="forwards simulation plus continuum solution")
    _common(sim, ("forwards-sim",), "forwards-sim")
    sim.add_argument("--target", choices=("allee", "scratch", "ou"))

    inf = sub.add_parser("infer", help="run one ABC inference")
    _common(inf, _INFER_KINDS, "allee-infer")
    inf.add_argument("--method", choices=METHODS)
    inf.add_argument("--approx-only", action="store_true",
                     help="use the approximate model alone (smc or rejection)")

    bench = sub.add_parser("bench-alpha", help="MM-SMC-ABC cost and error over alpha")
    _common(bench, ("alpha-bench",), "alpha-bench")
    bench.add_argument("--target", choices=("allee", "scratch", "ou", "toy"))
    bench.add_argument("--reference", metavar="CSV",
                       help="reference SMC-ABC population (from `infer --method smc`)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "simulate":
            cfg = _config(args, "forwards-sim")
            for path in simulate_forwards(cfg, args.out):
                print(path)
        elif args.verb == "infer":
            cfg = _config(args, "allee-infer")
            report = run_experiment(cfg, args.out)
            print(json.dumps({k: v for k, v in report.to_dict().items() if k != "levels"},
                             indent=2, sort_keys=True))
        else:
            cfg = _config(args, "alpha-bench")
            if not cfg.reference:
                raise ConfigError("bench-alpha needs --reference or [bench] reference")
            records = bench_alpha(cfg, load_reference(cfg.reference), args.out)
            Path(args.out).mkdir(parents=True, exist_ok=True)
            cfg.write(Path(args.out) / "config.ini")
            for row in bench_summary(records):
                print(", ".join(f"{k}={v:.4g}" for k, v in row.items()))
    except ConfigError as exc:
        print(f"rapidabc: config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
