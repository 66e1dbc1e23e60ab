"""
This module contains the command-line front end.

    python -m src.cli gen-graphs --preset desk --out results/desk
    python -m src.cli run --preset desk --out results/desk --jobs 4
    python -m src.cli plotdata --out results/desk --figure eps_vs_p
    python -m src.cli summarize --out results/desk
    python -m src.cli validate-config --config experiment.toml
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Sequence

import pandas as pd
import structlog

from .config import PRESETS, ExperimentConfig, load_experiment_config, preset_config, settings
from .errors import ConfigError, QaoaError
from .harness import FIGURES, emit_plot_data, prepare_graphs, run_experiment, summary_tables
from .logging_config import configure_logging

logger = structlog.get_logger()


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--config", type=Path, help="experiment file (.json or .toml)")
    source.add_argument("--preset", choices=sorted(PRESETS), help="named experiment")
    parser.add_argument("--seed", type=int, help="global seed override")


def _add_out(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", type=Path, help="results directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itlw-qaoa",
        description="Iterative layerwise QAOA training experiments for Max-Cut.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-graphs", help="generate the ensemble and cache C_max")
    _add_config_flags(gen)
    _add_out(gen)

    run = commands.add_parser("run", help="run every pending cell")
    _add_config_flags(run)
    _add_out(run)
    run.add_argument("--jobs", type=int, help="parallel cells")
    run.add_argument("--executor", choices=["process", "celery"])
    run.add_argument("--dry-run", action="store_true", help="print the cell count only")

    plot = commands.add_parser("plotdata", help="write figure CSVs")
    _add_out(plot)
    plot.add_argument("--figure", action="append", choices=FIGURES, help="repeatable")

    summary = commands.add_parser("summarize", help="print mean epsilon and r tables")
    _add_out(summary)

    validate = commands.add_parser("validate-config", help="check an experiment file")
    _add_config_flags(validate)
    return parser


def _experiment(args: argparse.Namespace) -> ExperimentConfig:
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        return load_experiment_config(args.config, **overrides)
    return preset_config(args.preset or "desk", **overrides)


def _out(args: argparse.Namespace, config: ExperimentConfig | None = None) -> Path:
    if args.out:
        return Path(args.out)
    if config is not None and config.output_dir:
        return config.output_dir
    name = config.name if config is not None else ""
    return Path(settings.RESULTS_DIR) / name


def _pivot(frame: pd.DataFrame, value: str) -> str:
    if frame.empty:
        return "(no ITLW/FO pairs)"
    table = frame.pivot_table(
        index=["optimizer", "initializer", "p"], columns="k", values=value, sort=True
    )
    return table.to_string(float_format=lambda x: f"{x:.4g}")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(settings.LOG_LEVEL, settings.LOG_JSON)
    try:
        if args.command == "validate-config":
            config = _experiment(args)
            print(f"ok: {config.name}, {len(config.graphs)} graph specs")
        elif args.command == "gen-graphs":
            config = _experiment(args)
            out = _out(args, config)
            out.mkdir(parents=True, exist_ok=True)
            graphs = prepare_graphs(config, out)
            print(f"{len(graphs)} graphs written to {out / 'graphs'}")
        elif args.command == "run":
            config = _experiment(args)
            if args.jobs is not None and args.jobs < 1:
                raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
            summary = run_experiment(
                config,
                out=_out(args, config),
                executor=args.executor,
                jobs=args.jobs,
                dry_run=args.dry_run,
            )
            if args.dry_run:
                print(f"{summary.scheduled} cells to run ({summary.skipped} already done)")
            else:
                print(
                    f"{summary.succeeded} cells done, {summary.failed} failed, "
                    f"{summary.skipped} skipped; results in {summary.out}"
                )
        elif args.command == "plotdata":
            for path in emit_plot_data(_out(args), args.figure):
                print(path)
        elif args.command == "summarize":
            tables = summary_tables(_out(args))
            print("mean epsilon (alpha_FO - alpha_ITLW)")
            print(_pivot(tables["eps"], "mean_eps"))
            print()
            print("mean r (V_ITLW / V_FO)")
            print(_pivot(tables["r"], "mean_r"))
    except QaoaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
