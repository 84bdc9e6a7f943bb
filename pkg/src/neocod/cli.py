"""Command line entry point.

Each subcommand executes the pipeline up to and including the named stage,
writing that stage's artifacts along with those of its prerequisites;
``run`` executes every stage and writes the manifest. All settings live in
a YAML configuration file; flags override the matching config entries, so
sensitivity modes are one flag away (``--early-share 0.65``, ``--no-cap``).

Exit codes: 0 on success, 1 for invalid inputs or configuration, 2 for
numerical failures during fitting or resampling.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys

from .errors import NeocodError, NumericalError
from .pipeline import PipelineRun, RunConfig

#: subcommand -> PipelineRun method; ordered as the stages execute
STAGE_COMMANDS = {
    "ingest": "stage_ingest",
    "impute": "stage_impute",
    "select": "stage_select",
    "fit": "stage_fit",
    "predict": "stage_predict",
    "allocate": "stage_allocate",
    "bootstrap": "stage_bootstrap",
    "aggregate": "stage_aggregate",
    "report": "stage_report",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", required=True, metavar="YAML",
        help="run configuration file",
    )
    common.add_argument(
        "--early-share", type=float, metavar="S",
        help="early fraction of each modelled envelope (default from config)",
    )
    common.add_argument(
        "--no-cap", action="store_true",
        help="predict from covariates as given instead of capping them "
             "to the training range",
    )
    common.add_argument(
        "--bootstrap-n", type=int, metavar="B",
        help="number of bootstrap replicates",
    )
    common.add_argument("--seed", type=int, help="random seed for the run")
    common.add_argument(
        "--jobs", type=int, metavar="N",
        help="worker processes for the bootstrap (results do not depend on N)",
    )
    common.add_argument(
        "--out", metavar="DIR", help="output directory (overrides config)",
    )

    parser = argparse.ArgumentParser(
        prog="neocod",
        description="Estimate neonatal deaths by cause from vital "
                    "registration, study data, and death envelopes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        sub.add_parser(
            name, parents=[common],
            help=f"run the pipeline through the {name} stage",
        )
    sub.add_parser("run", parents=[common], help="run every stage")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_yaml(args.config)
    overrides: dict = {}
    if args.early_share is not None:
        overrides["early_share"] = args.early_share
    if args.no_cap:
        overrides["cap_covariates"] = False
    if args.bootstrap_n is not None:
        overrides["bootstrap_n"] = args.bootstrap_n
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = PipelineRun(config_from_args(args))
        if args.command == "run":
            run.run()
        else:
            getattr(run, STAGE_COMMANDS[args.command])()
    except NumericalError as exc:
        print(f"neocod: {exc}", file=sys.stderr)
        return 2
    except NeocodError as exc:
        print(f"neocod: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
