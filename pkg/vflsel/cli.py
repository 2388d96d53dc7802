"""Command line entry point: `vflsel {run,synth,grid,report}`.

Exit codes: 0 on success, 2 for usage, configuration and input-data problems, 1 for failures at run time.
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

import pandas as pd
from rich.console import Console
from rich.table import Table

from .config import ExperimentConfig, load_config, load_synthetic_spec
from .datasets import save_csv
from .errors import ConfigError, DataError
from .experiments import grid_search, render_summary, run_experiment, summarize_run_dir
from .simulation import synth_generate
from .utils import get_logger, set_log_level

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
LOG_LEVEL_ENV = "VFLSEL_LOG_LEVEL"

logger = get_logger("vflsel-cli")


def print_seed_table(config: ExperimentConfig, console: Optional[Console] = None) -> None:
    table = Table(title="seeds")
    table.add_column("component")
    table.add_column("seed", justify="right")
    for name, seed in config.seed_table().items():
        table.add_row(name, str(seed))
    (console or Console()).print(table)


def cmd_run(config_path: str, output_dir: Optional[str] = None) -> int:
    config = load_config(config_path)
    print_seed_table(config)
    records = run_experiment(config, output_dir=output_dir)
    failed = [m for m, r in records.items() if r.status != "ok"]
    if failed:
        logger.error("Failed methods: {}".format(failed))
        return EXIT_FAILURE
    return EXIT_OK


def cmd_synth(spec_path: str, out_dir: str) -> int:
    spec = load_synthetic_spec(spec_path)
    ds, _ = synth_generate(spec)
    os.makedirs(out_dir, exist_ok=True)
    save_csv(ds, os.path.join(out_dir, "data.csv"))
    flags = pd.DataFrame({"feature": ds.feature_names, "spurious": ds.spurious_flags})
    flags.to_csv(os.path.join(out_dir, "spurious_flags.csv"), index=False)
    with open(os.path.join(out_dir, "spec.json"), "w", encoding="utf-8") as f:
        json.dump(spec.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("Wrote {} rows and {} features to {}.".format(ds.n_samples, ds.n_features, out_dir))
    return EXIT_OK


def cmd_grid(config_path: str, output_dir: Optional[str] = None) -> int:
    config = load_config(config_path)
    print_seed_table(config)
    table, winners = grid_search(config, output_dir=output_dir)
    console = Console()
    rich_table = Table(title="grid")
    for col in table.columns:
        rich_table.add_column(str(col))
    for row in table.itertuples(index=False):
        rich_table.add_row(*[str(x) for x in row])
    console.print(rich_table)
    for method, winner in winners.items():
        if winner is not None:
            console.print("{} winner: {}".format(method, winner))
    return EXIT_OK


def cmd_report(run_dir: str) -> int:
    df = summarize_run_dir(run_dir)
    render_summary(df, title=run_dir)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vflsel", description="Feature selection for vertical federated learning: simulation and experiments"
    )
    parser.add_argument(
        "--log-level",
        type=str,
        default=None,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Log verbosity (default: ${} or INFO)".format(LOG_LEVEL_ENV),
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="Run the methods of an experiment config and write reports")
    p_run.add_argument("config", type=str, help="JSON experiment config")
    p_run.add_argument("--out_dir", type=str, default=None, help="Override output_dir of the config")

    p_synth = sub.add_parser("synth", help="Draw a synthetic dataset to CSV with its spurious flags")
    p_synth.add_argument("spec", type=str, help="JSON synthetic spec")
    p_synth.add_argument("--out_dir", type=str, required=True, help="Output directory")

    p_grid = sub.add_parser("grid", help="Grid search over pre-training epochs and lambdas")
    p_grid.add_argument("config", type=str, help="JSON experiment config")
    p_grid.add_argument("--out_dir", type=str, default=None, help="Override output_dir of the config")

    p_report = sub.add_parser("report", help="Summarize the method reports of a run directory")
    p_report.add_argument("run_dir", type=str, help="Directory holding <method>/report.json")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    level = args.log_level or os.environ.get(LOG_LEVEL_ENV, "INFO")
    set_log_level(logging.getLevelName(level.upper()) if isinstance(level, str) else level)

    try:
        if args.cmd == "run":
            return cmd_run(args.config, args.out_dir)
        if args.cmd == "synth":
            return cmd_synth(args.spec, args.out_dir)
        if args.cmd == "grid":
            return cmd_grid(args.config, args.out_dir)
        return cmd_report(args.run_dir)
    except (ConfigError, DataError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except Exception as e:
        logger.exception("{} failed: {}".format(args.cmd, e))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
