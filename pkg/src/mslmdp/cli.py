"""Command-line driver: ``mslmdp {discretize,abstract,plan,simulate,pipeline}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config, parse_config
from .errors import ConfigError, NumericalError
from .scenarios import bundle_names, check_expected, load_bundle

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = {
    "discretize": "sample states and build the passive Markov chain",
    "abstract": "build the diffusion wavelet tree",
    "plan": "solve for the desirability function at the chosen level",
    "simulate": "run receding-horizon control episodes",
    "pipeline": "run all four stages in order",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mslmdp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in COMMANDS.items():
        p = sub.add_parser(name, help=text)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="scenario config (JSON)")
        src.add_argument("--scenario", help="bundled scenario name")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--level", type=int, help="override the planning level")
    sub.add_parser("scenarios", help="list bundled scenarios")
    return parser


def resolve_config(args):
    if args.scenario is not None:
        bundle = load_bundle(args.scenario)
        cfg, expected = parse_config(bundle.config), bundle.expected
    else:
        cfg, expected = load_config(args.config), None
    cfg = cfg.with_overrides(seed=args.seed, level=args.level,
                             output=str(args.out) if args.out is not None else None)
    if cfg.output is None:
        raise ConfigError("no output directory: pass --out or set 'output' in the config")
    return cfg, expected


def report(manifests: dict, expected) -> None:
    for stage, m in manifests.items():
        print(f"[{stage}]")
        print(json.dumps(m["summary"], indent=2, sort_keys=True))
    if expected:
        for key, ok, value in check_expected(expected, manifests):
            print(f"expected {key}: {'ok' if ok else 'FAIL'} ({value})")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "scenarios":
        for name in bundle_names():
            print(name)
        return EXIT_OK
    try:
        cfg, expected = resolve_config(args)
        out = Path(cfg.output)
        if args.command == "pipeline":
            manifests = pipeline.run_pipeline(cfg, out)
        else:
            manifests = {args.command: getattr(pipeline, args.command)(cfg, out)}
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report(manifests, expected)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
