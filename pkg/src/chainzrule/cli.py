"""Command line entry point: ``chainzrule <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments
from .experiments import ConfigError, resolve_config


def _seeds(text: str) -> tuple:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("seed list must not be empty")
    return seeds


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seeds", type=_seeds, help="comma separated seeds, e.g. 1337,1339,2024")
    p.add_argument("--limit", type=int, help="cap on rows loaded per data source")
    p.add_argument("--precision", type=int, choices=(32, 64))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainzrule", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in experiments.KINDS:
        _common(sub.add_parser(kind, help=f"run the {kind} experiment"))
    st = sub.add_parser("stats", help="paired tests over a results CSV")
    st.add_argument("--input", type=Path, required=True, help="results CSV")
    st.add_argument("--metric", default="tail_ratio")
    st.add_argument("--a", default="POLY_DREG", help="first group")
    st.add_argument("--b", default="POLY_BASE", help="second group")
    st.add_argument("--group-col", default="method")
    st.add_argument("--pair-on", default="h1,h2,seed", help="columns that match runs")
    st.add_argument("--out", help="directory for stats.json (stdout when omitted)")
    return parser


def _overrides(args) -> dict:
    values = {"out": args.out, "seeds": args.seeds, "limit": args.limit,
              "precision": args.precision}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        key = key.replace("-", "_")
        if key not in experiments.ExperimentConfig.__dataclass_fields__:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = experiments.parse_value(key, value)
    return values


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "stats":
            result = experiments.stats_from_csv(args.input, args.metric, args.a, args.b,
                                                args.group_col,
                                                tuple(c for c in args.pair_on.split(",") if c))
            text = json.dumps(result, indent=2, sort_keys=True)
            if args.out:
                experiments.write_json(Path(args.out) / "stats.json", result)
            print(text)
            return 0
        cfg = resolve_config(args.command, args.config, _overrides(args))
        experiments.run(cfg)
        print(f"wrote results to {cfg.out}")
        return 0
    except (ConfigError, experiments.BudgetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
