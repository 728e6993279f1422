"""Command-line entry point: ``byzsim run|sweep|report|presets``."""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import yaml

from ..core import ConfigError, UsageError
from . import config as cfg
from . import presets
from .report import report
from .runner import run, sweep

EXIT_OK = 0
EXIT_USAGE = 2


def _configs(args) -> list[cfg.ExperimentConfig]:
    if bool(args.config) == bool(args.preset):
        raise UsageError("give exactly one of --config or --preset")
    if args.config:
        return [cfg.load(args.config)]
    return presets.get(args.preset)


def parse_values(text: str) -> list:
    """``"0.1,10,1000"`` or a YAML list ``"[0.1, 10, 1000]"``; each item is read as YAML."""
    text = text.strip()
    if text.startswith("["):
        values = yaml.safe_load(text)
    else:
        values = [yaml.safe_load(v) for v in text.split(",") if v.strip()] if text else []
    if not isinstance(values, list) or not values:
        raise ConfigError("empty value list", "values")
    return values


def cmd_run(args) -> int:
    for c in _configs(args):
        res = run(c, out_dir=args.out, seed=args.seed)
        status = f"diverged at round {res.diverged_at}" if res.diverged else "ok"
        print(f"{c.name}: {res.csv_path} ({res.rows} rows, {status})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if len(args.axis) != len(args.values):
        raise UsageError("each --axis needs exactly one --values")
    axes = [(k, parse_values(v)) for k, v in zip(args.axis, args.values)]
    for c in _configs(args):
        if args.seed is not None:
            c = cfg.with_overrides(c, seed=args.seed)
        out = Path(args.out or c.output) / c.name if args.preset else args.out
        index = sweep(c, axes, out_dir=out, jobs=args.jobs)
        runs = json.loads(index.read_text())["runs"]
        print(f"{c.name}: {len(runs)} runs, index {index}")
    return EXIT_OK


def cmd_report(args) -> int:
    rep = report(args.files, json_path=args.json, long_path=args.long)
    print(rep.text())
    if rep.long_path:
        print(f"long-format CSV: {rep.long_path}", file=sys.stderr)
    return EXIT_OK if rep.runs else 1


def cmd_presets(args) -> int:
    if args.export:
        out = Path(args.export)
        out.mkdir(parents=True, exist_ok=True)
        names = [args.name] if args.name else sorted(presets.PRESETS)
        for name in names:
            for c in presets.get(name):
                print(cfg.save(c, out / f"{c.name}.yaml"))
        return EXIT_OK
    for name in sorted(presets.PRESETS):
        print(f"{name:18s} {presets.describe(name)}")
    return EXIT_OK


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="byzsim", description="Byzantine-robust distributed SGD simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one config or preset")
    r.add_argument("--config")
    r.add_argument("--preset")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a config over one or more axes")
    s.add_argument("--config")
    s.add_argument("--preset")
    s.add_argument("--axis", action="append", default=[], required=True,
                   help="dotted key, e.g. aggregator.tau (repeat for a grid)")
    s.add_argument("--values", action="append", default=[], required=True,
                   help="comma-separated values for the matching --axis")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", help="summarize metrics files")
    rep.add_argument("files", nargs="+")
    rep.add_argument("--json")
    rep.add_argument("--long", help="long-format CSV path")
    rep.set_defaults(func=cmd_report)

    pr = sub.add_parser("presets", help="list presets or export them as config files")
    pr.add_argument("name", nargs="?")
    pr.add_argument("--export", metavar="DIR")
    pr.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _show_warning
            return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
