"""Command-line entry point.

    mobexpose <stage> --config run.json [--seed N] [--threads N] [--out DIR]

Stages: synth, fit, validate, predict, mobility, expose, report, and
`covariates export` for design-matrix audits. Exit codes: 0 success,
2 configuration/schema error, 1 runtime error.

Thread-count control must happen before numpy loads, so heavy imports are
deferred until after the environment is set.
"""

from __future__ import annotations

import argparse
import os
import sys


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobexpose",
        description=(
            "Mobility-aware ozone exposure pipeline: fit the pollution model, "
            "predict at cell towers, replay device trajectories, and report "
            "the dynamic-vs-static exposure assignment bias."
        ),
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    stage_names = ["synth", "fit", "validate", "predict", "mobility", "expose", "report"]
    for name in stage_names:
        p = sub.add_parser(name, help=f"run the {name} stage")
        _add_common(p)
    cov = sub.add_parser("covariates", help="covariate utilities")
    cov.add_argument("action", choices=["export"], help="export the design matrix as CSV")
    _add_common(cov)
    return parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the JSON run configuration")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--threads", type=int, default=None, help="worker/BLAS thread count (1 = deterministic single-threaded)")
    p.add_argument("--out", default=None, help="override the configured output directory")


def _set_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)

    # Resolve the thread count from flag or config before numpy is imported.
    threads = args.threads
    if threads is None:
        import json

        try:
            with open(args.config) as fh:
                threads = int(json.load(fh).get("threads", 0) or 0)
        except (OSError, ValueError, AttributeError):
            threads = 0
    if threads and threads > 0:
        _set_threads(threads)

    from .config import ConfigError, load_config

    overrides = {"seed": args.seed, "out": args.out}
    if args.threads is not None:
        overrides["threads"] = args.threads
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    from .ingest import IngestError
    from .pipeline import STAGES, StageError, run_covariates_export

    try:
        if args.stage == "covariates":
            run_covariates_export(cfg)
        else:
            STAGES[args.stage](cfg)
    except (ConfigError, IngestError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
