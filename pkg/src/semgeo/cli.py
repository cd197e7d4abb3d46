"""Command-line entry point.

Verbs:
    simulate      belief tracking experiments (safety probability over time)
    benchmark     estimator accuracy/runtime sweeps
    plan          closed-loop planning trials
    oracle-check  run the built-in consistency checks

Exit codes: 0 success, 2 configuration or usage error, 3 oracle failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (
    ALL_KINDS,
    BENCHMARK_KINDS,
    ESTIMATION_KINDS,
    PLANNING_KINDS,
    ConfigError,
    ExperimentConfig,
    load_scenario,
    run_experiment,
)
from .oracles import run_oracle_checks
from .scenario import ScenarioError

_VERB_KINDS = {
    "simulate": ESTIMATION_KINDS,
    "benchmark": BENCHMARK_KINDS,
    "plan": PLANNING_KINDS,
}


def _add_common(p: argparse.ArgumentParser, config_required: bool) -> None:
    p.add_argument(
        "--config",
        required=config_required,
        help="experiment config JSON (see README for the schema)",
    )
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument(
        "--methods",
        default=None,
        help="comma-separated subset of the config's methods to run",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semgeo",
        description="Hybrid semantic-geometric belief estimation and planning",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, kinds in _VERB_KINDS.items():
        p = sub.add_parser(verb, help=f"run a {'/'.join(kinds)} experiment")
        _add_common(p, config_required=True)
    p = sub.add_parser("oracle-check", help="run built-in consistency checks")
    _add_common(p, config_required=False)
    return parser


def _run_configured(args, allowed_kinds) -> int:
    config = ExperimentConfig.from_json(args.config)
    if config.kind not in allowed_kinds:
        raise ConfigError(
            f"verb expects kind in {allowed_kinds}, config has {config.kind!r}"
        )
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out = args.out
    if args.methods is not None:
        subset = tuple(m.strip() for m in args.methods.split(",") if m.strip())
        bad = [m for m in subset if m not in config.methods]
        if bad:
            raise ConfigError(f"--methods {bad} not present in config methods")
        config.methods = subset
    summary = run_experiment(config)
    print(json.dumps({k: summary[k] for k in ("kind", "files") if k in summary}))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "oracle-check":
            scenario = None
            if args.config is not None:
                with open(args.config, encoding="utf-8") as fh:
                    cfg = json.load(fh)
                scenario = load_scenario(cfg.get("scenario", "oracle_small"))
            passed, checks = run_oracle_checks(
                scenario, seed=args.seed if args.seed is not None else 0
            )
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                with open(out / "oracle_check.json", "w", encoding="utf-8") as fh:
                    json.dump(
                        [c.__dict__ for c in checks], fh, indent=2, default=str
                    )
            return 0 if passed else 3
        return _run_configured(args, _VERB_KINDS[args.verb])
    except (ConfigError, ScenarioError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
