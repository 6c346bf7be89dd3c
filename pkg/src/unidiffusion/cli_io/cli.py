"""Command line interface.

    unidiffusion run CONFIG [--output DIR] [--set KEY=VALUE ...]
    unidiffusion compare LOW_CONFIG HIGH_CONFIG --output DIR [--set ...]
    unidiffusion steady CONFIG [--output DIR] [--set ...]
    unidiffusion verify DIR

Configs are JSON files (see docs/config.md).  --set overrides a dotted key
in the config before validation; the value is parsed as a JSON literal
when possible and kept as a string otherwise, e.g.

    --set solver.tol=1e-12  --set partition.steps=200  --set f="x + t"

Exit status: 0 all checks passed, 1 a check or the run itself failed,
2 the configuration was invalid.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..mesh import GridError
from ..obstacle import ConvergenceError, PreconditionError
from ..stepper import StepError
from .config import ConfigError, RunConfig, config_from_dict
from .runner import compare_runs, execute, solve_steady, verify_directory

__all__ = ["main", "main_entry"]


def _apply_override(raw: dict, assignment: str) -> None:
    key, sep, text = assignment.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"--set {assignment!r}: expected KEY=VALUE")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    parts = key.split(".")
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[parts[-1]] = value


def _load_config(path, overrides) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    for assignment in overrides or []:
        _apply_override(raw, assignment)
    return config_from_dict(raw, base_dir=path.parent)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unidiffusion",
        description="Implicit solver and certifier for the irreversible "
                    "diffusion law du/dt = (laplacian(u) + f)+.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--set", dest="overrides", action="append",
                       metavar="KEY=VALUE", default=[],
                       help="override a dotted config key before validation")

    p = sub.add_parser("run", help="advance the evolution and certify it")
    p.add_argument("config", help="JSON run configuration")
    p.add_argument("--output", help="output directory (overrides the config)")
    add_common(p)

    p = sub.add_parser("compare",
                       help="run two ordered configurations and check order "
                            "preservation")
    p.add_argument("low_config", help="configuration with the smaller data")
    p.add_argument("high_config", help="configuration with the larger data")
    p.add_argument("--output", required=True, help="output directory")
    add_common(p)

    p = sub.add_parser("steady", help="solve the stationary problem for f_inf")
    p.add_argument("config", help="JSON run configuration (must set f_inf)")
    p.add_argument("--output", help="output directory (overrides the config)")
    add_common(p)

    p = sub.add_parser("verify",
                       help="re-certify a finished run from its artifacts")
    p.add_argument("directory", help="output directory of a previous run")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = _load_config(args.config, args.overrides)
            return execute(config, out_dir=args.output)
        if args.command == "compare":
            low = _load_config(args.low_config, args.overrides)
            high = _load_config(args.high_config, args.overrides)
            return compare_runs(low, high, args.output)
        if args.command == "steady":
            config = _load_config(args.config, args.overrides)
            return solve_steady(config, out_dir=args.output)
        return verify_directory(args.directory)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.residuals is not None:
            print(f"error: solver residuals {exc.residuals.to_dict()}",
                  file=sys.stderr)
        return 1
    except (PreconditionError, GridError, ConvergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main_entry() -> None:
    sys.exit(main(sys.argv[1:]))
