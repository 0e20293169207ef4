"""Command-line interface: analyze, synth, validate."""

from __future__ import annotations

import argparse
import json
import sys

from .cohort import parse_cohort, write_cohort
from .errors import EcaError
from .pipeline import run_analysis
from .plan import load_plan, validate_plan
from .synth import generate_cohort, load_scenario


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eca",
        description="External control arm construction and estimand-aligned "
        "comparison against a single-arm trial cohort.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_an = sub.add_parser("analyze", help="run the full analysis pipeline")
    p_an.add_argument("--cohort", required=True, help="cohort CSV path")
    p_an.add_argument("--plan", required=True, help="analysis plan TOML path")
    p_an.add_argument("--out", required=True, help="output directory for artifacts")
    p_an.add_argument("--reps", type=int, default=None, help="override bootstrap reps")
    p_an.add_argument("--seed", type=int, default=None, help="override RNG seed")
    p_an.add_argument(
        "--no-stratify", action="store_true",
        help="resample without stratifying by arm",
    )
    p_an.add_argument(
        "--freeze-weights", action="store_true",
        help="reuse the original weights instead of re-fitting per replicate",
    )
    p_an.add_argument("--workers", type=int, default=1, help="bootstrap workers")
    p_an.add_argument("--dump-reps", default=None, help="CSV of replicate statistics")
    p_an.add_argument("--dump-psmodel", default=None, help="JSON propensity model audit")

    p_sy = sub.add_parser("synth", help="generate a synthetic cohort CSV")
    p_sy.add_argument("--scenario", required=True, help="scenario TOML path")
    p_sy.add_argument("--out", required=True, help="output cohort CSV path")

    p_va = sub.add_parser("validate", help="validate a cohort against a plan")
    p_va.add_argument("--cohort", required=True)
    p_va.add_argument("--plan", required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            result = run_analysis(
                args.cohort,
                args.plan,
                args.out,
                reps=args.reps,
                seed=args.seed,
                stratify=not args.no_stratify,
                freeze_weights=args.freeze_weights,
                n_workers=args.workers,
                dump_reps=args.dump_reps,
                dump_psmodel=args.dump_psmodel,
            )
            print(f"analysis complete: artifacts in {args.out}")
            for warning in result.boot.warnings:
                print(f"warning: {warning}", file=sys.stderr)
            return 0
        if args.command == "synth":
            config = load_scenario(args.scenario)
            cohort, truth = generate_cohort(config)
            write_cohort(cohort, args.out)
            print(
                f"wrote {args.out}: {config.n_trial} trial patients, "
                f"{config.n_rw} external patients ({truth.n_lines_rw} lines)"
            )
            return 0
        if args.command == "validate":
            plan, defaults = load_plan(args.plan)
            # Parse only covariates actually present so a covariate missing
            # from the file surfaces as a validation error, not a parse error.
            with open(args.cohort, newline="") as fh:
                header = fh.readline().rstrip("\n").split(",")
            present = tuple(c for c in plan.covariate_names if c in header)
            cohort = parse_cohort(args.cohort, present)
            report = validate_plan(plan, cohort)
            for d in defaults:
                print(f"default applied: {d}")
            for e in report.errors:
                print(f"error: {e}")
            for w in report.warnings:
                print(f"warning: {w}")
            if report.errors:
                return 1
            print("plan and cohort are consistent")
            return 0
        raise AssertionError(f"unknown command {args.command}")
    except (EcaError, OSError) as exc:
        json.dump(
            {"error": type(exc).__name__, "message": str(exc)},
            sys.stderr,
        )
        sys.stderr.write("\n")
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
