"""``slicelab`` command-line entry point.

Exit codes: 0 success, 2 usage error, 3 experiment failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import fields

from .errors import ConfigurationError, SliceLabError
from .experiments import COMMANDS, ExperimentConfig, RunReport, cmd_eval

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 2, 3
_BOOL_KEYS = ("slice_filter", "propagate")


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` comments allowed."""
    parser = configparser.ConfigParser(interpolation=None)
    with open(path) as fh:
        parser.read_string("[slicelab]\n" + fh.read())
    return {k.replace("-", "_"): v for k, v in parser["slicelab"].items()}


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    if key in ("seed", "trials", "pages"):
        return int(value, 0)
    if key in _BOOL_KEYS:
        if value.lower() not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ConfigurationError(f"{key} expects a boolean, got {value!r}")
        return value.lower() in ("1", "true", "yes", "on")
    if key == "methods":
        return tuple(m.strip() for m in value.split(",") if m.strip())
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slicelab", description="Sliced-LLC simulation experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--cpu", help="processor preset name")
    common.add_argument("--seed", type=int)
    common.add_argument("--scenario", choices=("quiet", "busy"))
    common.add_argument("--out", help="directory for report.json and CSV files")
    common.add_argument("--trials", type=int)
    common.add_argument("--pages", type=int)
    common.add_argument("--config", help="flat key=value file; flags override it")
    sub = p.add_subparsers(dest="command", required=True)
    ev = sub.add_parser("eval", parents=[common], help="slice of physical addresses")
    ev.add_argument("addrs", nargs="*", type=lambda s: int(s, 0))
    sub.add_parser("mappings", parents=[common], help="list page-slice mappings")
    sub.add_parser("recover", parents=[common], help="recover the slice function from lookups")
    cb = sub.add_parser("classify-bench", parents=[common], help="slice and page classification accuracy")
    cb.add_argument("--methods", type=lambda s: _coerce("methods", s))
    eb = sub.add_parser("evict-bench", parents=[common], help="eviction-set generation")
    eb.add_argument("--mode", dest="evict_mode", choices=("page_offset", "full_llc"))
    eb.add_argument("--no-slice-filter", dest="slice_filter", action="store_const", const=False)
    eb.add_argument("--no-propagate", dest="propagate", action="store_const", const=False)
    eb.add_argument("--classifier", choices=("tree", "bayes", "truth"))
    eb.add_argument("--tester", choices=("congruence", "hierarchy"))
    sub.add_parser("propagate-stats", parents=[common], help="conventional-build fraction under propagation")
    return p


def make_config(args: argparse.Namespace) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    values: dict = {}
    if args.config:
        for k, v in read_config_file(args.config).items():
            if k not in known:
                raise ConfigurationError(f"unknown config key {k!r}")
            values[k] = _coerce(k, v)
    for k, v in vars(args).items():
        if k in known and v is not None:
            values[k] = v
    return ExperimentConfig(**values)


def _summary(report: RunReport) -> str:
    body = {k: v for k, v in (("accuracy", report.accuracy), ("measurements_per_page", report.measurements_per_page),
                              ("operations", report.operations), ("eviction", report.eviction),
                              ("results", report.results)) if v}
    return json.dumps(body, indent=2, sort_keys=True)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = make_config(args)
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"slicelab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "eval":
            report = cmd_eval(cfg, args.addrs)
        else:
            report = COMMANDS[args.command](cfg)
    except ConfigurationError as exc:
        print(f"slicelab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SliceLabError as exc:
        print(f"slicelab: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if args.command == "mappings":
        print("\n".join(report.results["listing"]))
        print(f"{report.results['mapping_count']} mappings")
    else:
        print(_summary(report))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
