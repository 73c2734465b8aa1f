"""Command-line entry point: ``run``, ``report``, ``props`` and ``validate``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .activations import ActivationSpec, Kind
from .analytic import dead_band_width, effective_negative_slope, property_grid
from .config import SchemaError, load_config
from .errors import ConfigError, ParseError
from .presets import PROPERTY_CANONICAL
from .runner import REPORT_KINDS, build_report, run_experiment


def _coerce(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def parse_spec(text: str) -> ActivationSpec:
    """A canonical row name, a kind, ``kind=..,alpha=..`` pairs, or a YAML/JSON file."""
    if text in PROPERTY_CANONICAL:
        return PROPERTY_CANONICAL[text]
    path = Path(text)
    if path.suffix in (".yaml", ".yml", ".json") and path.exists():
        data = yaml.safe_load(path.read_text())
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return ActivationSpec.from_dict(data)
    if "=" in text:
        data = {}
        for part in text.split(","):
            key, sep, value = part.partition("=")
            if not sep:
                raise ConfigError(f"malformed activation field {part!r}; use key=value")
            data[key.strip()] = _coerce(value.strip())
        return ActivationSpec.from_dict(data)
    try:
        return ActivationSpec(Kind(text))
    except ValueError:
        raise ConfigError(
            f"unknown activation {text!r}; use a kind ({', '.join(k.value for k in Kind)}), "
            f"a row name ({', '.join(PROPERTY_CANONICAL)}) or key=value pairs"
        ) from None


def _error(exc: BaseException, code: int) -> int:
    body = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, SchemaError):
        body["path"] = exc.path
        body["message"] = exc.detail
    print(json.dumps(body), file=sys.stderr)
    return code


def cmd_run(args) -> int:
    config = load_config(args.config)
    out = run_experiment(config, overwrite=args.overwrite, jobs=args.jobs, output_dir=args.output)
    manifest = json.loads((out / "manifest.json").read_text())
    print(json.dumps({"output": str(out), "cells": manifest["n_cells"], "failed": manifest["n_failed"]}))
    return 0


def cmd_report(args) -> int:
    info = build_report(args.dir, args.kind, x=args.x, y=args.y)
    print(json.dumps(info))
    return 0


def cmd_props(args) -> int:
    spec = parse_spec(args.spec)
    out = {
        "activation": spec.to_dict(),
        "properties": property_grid(spec).as_dict(),
        "dbw": dead_band_width(spec),
        "s_bar": effective_negative_slope(spec),
    }
    print(json.dumps(out, indent=2 if args.pretty else None))
    return 0


def cmd_validate(args) -> int:
    config = load_config(args.config)
    print(json.dumps({"valid": True, "experiment": config.experiment, "name": config.name}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plasticity-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute an experiment config")
    p.add_argument("config")
    p.add_argument("--overwrite", action="store_true", help="replace an existing output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--output", help="override the config's output_dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="aggregate a result directory")
    p.add_argument("dir")
    p.add_argument("--kind", choices=REPORT_KINDS, default="summary")
    p.add_argument("--x", default="dbw", help="x metric for correlation reports")
    p.add_argument("--y", default="ausc", help="y metric for correlation reports")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("props", help="property grid, DBW and effective slope of one activation")
    p.add_argument("spec")
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_props)

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        return _error(ConfigError("--jobs must be >= 1"), 2)
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        return _error(exc, 2)
    except FileExistsError as exc:
        return _error(exc, 3)
    except Exception as exc:  # noqa: BLE001 - surfaced as machine-readable JSON
        return _error(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
