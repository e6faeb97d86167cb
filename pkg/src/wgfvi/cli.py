"""Command-line entry point.

    wgfvi <kind> --config path.json [--seed n] [--out dir] [--parallel k]

The config file holds one experiment object or a list of them; with a
list, each experiment writes into its own subdirectory of --out (or of
its configured out_dir) and --parallel runs them concurrently.  Exit
codes: 0 success, 2 configuration error, 3 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .errors import ConfigError, ConvergenceError, DegeneracyError
from .experiments import EXPERIMENT_KINDS, ExperimentConfig, parse_config, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wgfvi",
        description="Variational inference via gradient flows on Gaussian families.",
    )
    parser.add_argument("kind", choices=EXPERIMENT_KINDS, help="experiment kind to run")
    parser.add_argument("--config", required=True, help="path to a JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument(
        "--parallel", type=int, default=1, metavar="K",
        help="run up to K experiments from a config list concurrently",
    )
    return parser


def _load_configs(args) -> list[ExperimentConfig]:
    try:
        raw = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config is not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}"
        ) from exc

    if isinstance(raw, list):
        if not raw:
            raise ConfigError("config list is empty")
        configs = []
        for i, item in enumerate(raw):
            base = args.out if args.out is not None else item.get("out_dir", f"out/{args.kind}")
            configs.append(
                parse_config(
                    item, kind=args.kind, seed=args.seed,
                    out_dir=str(Path(base) / f"run_{i:03d}") if args.out is not None else None,
                )
            )
        return configs
    return [parse_config(raw, kind=args.kind, seed=args.seed, out_dir=args.out)]


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.parallel < 1:
        print("error: --parallel must be >= 1", file=sys.stderr)
        return 2
    try:
        configs = _load_configs(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.parallel > 1 and len(configs) > 1:
            with ThreadPoolExecutor(max_workers=args.parallel) as pool:
                summaries = list(pool.map(run_experiment, configs))
        else:
            summaries = [run_experiment(cfg) for cfg in configs]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DegeneracyError, ConvergenceError) as exc:
        print(f"numerical degeneracy: {exc}", file=sys.stderr)
        return 3

    for cfg, summary in zip(configs, summaries):
        final = summary.get("final_kl", summary.get("vi_kl", summary.get("log_z", "")))
        print(f"{cfg.kind}: wrote {cfg.out_dir} (final {final})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
