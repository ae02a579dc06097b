"""Command-line front end for the experiment harness.

Usage:
    kernelflows <kind> [--config path.json] [--seed N] [--out PREFIX]
                [--override key=value ...]

`kind` is one of the experiment kinds or `suite` (whose config file holds
a JSON list of experiment configs).  Precedence for every scalar field is
flag > config file > built-in default.  Exit status: 0 when every
assertion passed, 1 on an assertion or convergence failure, 2 on a usage
or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import KINDS, ConfigError, run_experiment, run_suite


def _parse_override(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kernelflows",
        description="Run a kernel-flow experiment and write CSV/JSON artifacts.",
    )
    parser.add_argument("kind", choices=sorted(KINDS) + ["suite"], help="experiment kind to run")
    parser.add_argument("--config", help="JSON config file (a list of configs for 'suite')")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output path prefix for artifacts")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        type=_parse_override,
        metavar="KEY=VALUE",
        help="override a top-level config field (value parsed as JSON when possible)",
    )
    parser.add_argument("--jobs", type=int, default=1, help="suite-level parallelism")
    return parser


def _load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.kind == "suite":
            if not args.config:
                raise ConfigError("suite mode requires --config with a JSON list")
            manifest = _load_config(args.config)
            if not isinstance(manifest, list):
                raise ConfigError("suite config must be a JSON list of experiment configs")
            for entry in manifest:
                _apply_flags(entry, args, set_kind=False)
            suite = run_suite(manifest, jobs=args.jobs)
            print(suite.to_json())
            return 0 if suite.passed else 1

        config = _load_config(args.config) if args.config else {}
        if not isinstance(config, dict):
            raise ConfigError("experiment config must be a JSON object")
        _apply_flags(config, args, set_kind=True)
        report = run_experiment(config)
        print(report.to_json())
        return 0 if report.passed else 1
    except ValueError as exc:
        # covers ConfigError and invalid parameter combinations surfaced
        # by the library (both are usage errors at the CLI boundary)
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def _apply_flags(config: dict, args, set_kind: bool) -> None:
    if set_kind:
        config["kind"] = args.kind
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out is not None:
        config["out"] = args.out
    for key, value in args.override:
        config[key] = value


if __name__ == "__main__":
    raise SystemExit(main())
