"""End-to-end orchestration: parse -> complete-case -> subgroup -> stage-1
fit -> line selection -> stage-2 fit -> weights -> balance -> outcomes ->
estimators -> bootstrap -> report artifacts.

Artifacts written to the output directory: balance.csv, effects.csv,
km_curves.csv, runlog.json. CSV artifacts are byte-identical across runs
with the same inputs and seed.
"""

from __future__ import annotations

import csv
import datetime
import json
import math
import os
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import __version__
from .bootstrap import BootstrapConfig, BootstrapResult, run_bootstrap
from .cohort import Arm, Cohort, complete_case_filter, eligible_lines, parse_cohort
from .effects import BinaryOutcome, TteOutcome, build_outcomes, compute_statistics
from .errors import ConfigError
from .estimators import weighted_km
from .plan import AnalysisPlan, apply_subgroup_filter, load_plan, validate_plan
from .propensity import build_design, fit_design
from .weighting import WeightedSample, build_weighted_sample

RUNLOG_SCHEMA = {
    "type": "object",
    "required": [
        "version", "seed", "started_at", "finished_at", "plan",
        "defaults_applied", "exclusions", "validation", "stage1_fit",
        "stage2_fit", "selection", "balance", "effects", "bootstrap",
    ],
    "properties": {
        "version": {"type": "string"},
        "seed": {"type": "integer"},
        "started_at": {"type": "string"},
        "finished_at": {"type": "string"},
        "plan": {"type": "object"},
        "defaults_applied": {"type": "array", "items": {"type": "string"}},
        "exclusions": {"type": "object"},
        "validation": {"type": "object"},
        "stage1_fit": {"type": "object"},
        "stage2_fit": {"type": "object"},
        "selection": {
            "type": "object",
            "required": ["selected_line_distribution", "median_selected_line"],
        },
        "balance": {"type": "array", "items": {"type": "object"}},
        "effects": {"type": "array", "items": {"type": "object"}},
        "bootstrap": {
            "type": "object",
            "required": ["reps", "n_failed", "stratify_by_arm", "freeze_weights"],
        },
    },
}


@dataclass
class AnalysisResult:
    sample: WeightedSample
    balance: list
    outcomes: dict
    point_stats: dict[str, float]
    boot: BootstrapResult
    runlog: dict
    stage1_fit: object = None
    stage2_fit: object = None


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        if math.isnan(value):
            return "NA"
        return repr(value)
    return str(value)


def _jsonable(obj):
    if isinstance(obj, float):
        return None if not math.isfinite(obj) else obj
    if isinstance(obj, (np.floating, np.integer)):
        return _jsonable(obj.item())
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _plan_echo(plan: AnalysisPlan) -> dict:
    return {
        "covariates": [
            {"name": c.name, "type": c.kind, "reference": c.reference}
            for c in plan.covariates
        ],
        "estimands": [
            {
                "id": e.estimand_id,
                "endpoint": e.endpoint.value,
                "strategy": e.strategy.value,
                "admin_cutoff_months": e.admin_cutoff_months,
                "landmarks_months": list(e.landmarks_months),
                "summary": e.summary.value,
            }
            for e in plan.estimands
        ],
        "subgroup_filter": None
        if plan.subgroup_filter is None
        else {
            "line_start_on_or_after": plan.subgroup_filter.line_start_on_or_after,
            "covariate": plan.subgroup_filter.covariate,
            "op": plan.subgroup_filter.op,
            "value": plan.subgroup_filter.value,
        },
        "bootstrap_reps": plan.bootstrap_reps,
        "seed": plan.seed,
        "smd_threshold": plan.smd_threshold,
    }


def _fit_summary(fit) -> dict:
    return {
        "intercept": fit.intercept,
        "coefficients": dict(zip(fit.column_names, fit.coefficients.tolist())),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "log_likelihood": fit.log_likelihood,
        "sandwich_se": np.sqrt(np.diag(fit.sandwich_covariance)).tolist(),
        "model_se": np.sqrt(np.diag(fit.model_covariance)).tolist(),
    }


def _effect_rows(plan: AnalysisPlan, point: dict, boot: BootstrapResult,
                 outcomes: dict, sample: WeightedSample) -> list[dict]:
    rows = []
    for spec in plan.estimands:
        eid = spec.estimand_id
        if spec.is_binary:
            keys = ["trial_rate", "rw_rate", "diff"]
        else:
            keys = ["loghr", "median_trial", "median_rw"]
            keys += [
                f"landmark_{t:g}_{side}"
                for t in spec.landmarks_months
                for side in ("trial", "rw")
            ]
        for key in keys:
            name = f"{eid}.{key}"
            lo, hi = boot.cis.get(name, (float("nan"), float("nan")))
            rows.append(
                {
                    "estimand": eid,
                    "statistic": key,
                    "value": point.get(name),
                    "ci_low": lo,
                    "ci_high": hi,
                }
            )
        if not spec.is_binary:
            outcome = outcomes[eid]
            trial = sample.arms == 1
            rows.append({
                "estimand": eid, "statistic": "events_trial",
                "value": float(outcome.events[trial].sum()),
                "ci_low": float("nan"), "ci_high": float("nan"),
            })
            rows.append({
                "estimand": eid, "statistic": "events_rw_weighted",
                "value": float(
                    (sample.weights[~trial] * outcome.events[~trial]).sum()
                ),
                "ci_low": float("nan"), "ci_high": float("nan"),
            })
    return rows


def _write_balance_csv(path, balance) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["covariate", "trial_mean", "trial_sd", "rw_pre_mean", "rw_pre_sd",
             "rw_post_mean", "rw_post_sd", "smd_pre", "smd_post"]
        )
        for row in balance:
            writer.writerow(
                [row.column, _fmt(row.trial_mean), _fmt(row.trial_sd),
                 _fmt(row.rw_pre_mean), _fmt(row.rw_pre_sd),
                 _fmt(row.rw_post_mean), _fmt(row.rw_post_sd),
                 _fmt(row.smd_pre), _fmt(row.smd_post)]
            )


def _write_effects_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["estimand", "statistic", "value", "ci_low", "ci_high"])
        for row in rows:
            writer.writerow(
                [row["estimand"], row["statistic"], _fmt(row["value"]),
                 _fmt(row["ci_low"]), _fmt(row["ci_high"])]
            )


def _write_km_csv(path, plan, outcomes, sample) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["estimand", "arm", "time_months", "survival",
             "at_risk_weight", "event_weight"]
        )
        trial = sample.arms == 1
        for spec in plan.estimands:
            if spec.is_binary:
                continue
            outcome = outcomes[spec.estimand_id]
            for arm_name, mask, w in (
                ("TRIAL", trial, np.ones(int(trial.sum()))),
                ("RW", ~trial, sample.weights[~trial]),
            ):
                curve = weighted_km(
                    outcome.times[mask], outcome.events[mask], w,
                    spec.landmarks_months,
                )
                for t, s, n_w, d_w in zip(
                    curve.times, curve.survival,
                    curve.at_risk_weight, curve.event_weight,
                ):
                    writer.writerow(
                        [spec.estimand_id, arm_name, _fmt(float(t)),
                         _fmt(float(s)), _fmt(float(n_w)), _fmt(float(d_w))]
                    )


def _dump_reps_csv(path, boot: BootstrapResult) -> None:
    names = sorted(boot.statistics)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["replicate"] + names)
        for rep in range(boot.n_reps):
            writer.writerow(
                [rep] + [_fmt(float(boot.statistics[n][rep])) for n in names]
            )


def analyze_cohort(
    cohort: Cohort,
    plan: AnalysisPlan,
    defaults_applied: Optional[list[str]] = None,
    reps: Optional[int] = None,
    seed: Optional[int] = None,
    stratify: bool = True,
    freeze_weights: bool = False,
    n_workers: int = 1,
) -> AnalysisResult:
    """Run the full analysis on an in-memory cohort."""
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    if reps is not None:
        plan = replace(plan, bootstrap_reps=reps)
    if seed is not None:
        plan = replace(plan, seed=seed)

    cohort, exclusions = complete_case_filter(cohort, plan.covariate_names)
    if plan.subgroup_filter is not None:
        cohort = apply_subgroup_filter(cohort, plan.subgroup_filter)
    validation = validate_plan(plan, cohort)
    if validation.errors:
        raise ConfigError("; ".join(validation.errors))

    # External patients need at least one eligible line to enter the design.
    usable_rw = [
        p for p in cohort.patients_in(Arm.EXTERNAL_CONTROL) if eligible_lines(p)
    ]
    if not usable_rw:
        raise ConfigError("no external patient has an eligible line")

    design1 = build_design(cohort, plan)
    fit1 = fit_design(design1)
    sample, balance, fit2 = build_weighted_sample(cohort, fit1, design1, plan)

    outcomes = build_outcomes(sample, plan)
    point_stats = compute_statistics(outcomes, sample.arms, sample.weights)

    config = BootstrapConfig(
        reps=plan.bootstrap_reps,
        seed=plan.seed,
        stratify_by_arm=stratify,
        freeze_weights=freeze_weights,
        n_workers=n_workers,
    )
    boot = run_bootstrap(sample, outcomes, plan, config)

    rw_lines = sample.line_numbers[sample.arms == 0]
    selection = {
        "selected_line_distribution": {
            str(int(ln)): int((rw_lines == ln).sum()) for ln in np.unique(rw_lines)
        },
        "median_selected_line": float(np.median(rw_lines)),
        "rw_weight_sum": sample.rw_weight_sum(),
        "rw_effective_sample_size": sample.rw_ess(),
    }

    effect_rows = _effect_rows(plan, point_stats, boot, outcomes, sample)
    finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
    runlog = {
        "version": __version__,
        "seed": plan.seed,
        "started_at": started,
        "finished_at": finished,
        "plan": _plan_echo(plan),
        "defaults_applied": list(defaults_applied or []),
        "exclusions": exclusions.as_dict(),
        "validation": validation.as_dict(),
        "stage1_fit": _fit_summary(fit1),
        "stage2_fit": _fit_summary(fit2),
        "selection": selection,
        "balance": [
            {
                "covariate": b.column,
                "smd_pre": b.smd_pre,
                "smd_post": b.smd_post,
                "exceeds_threshold_post": bool(
                    not math.isnan(b.smd_post) and b.smd_post > plan.smd_threshold
                ),
            }
            for b in balance
        ],
        "effects": effect_rows,
        "bootstrap": {
            "reps": config.reps,
            "n_failed": boot.n_failed,
            "stratify_by_arm": config.stratify_by_arm,
            "freeze_weights": config.freeze_weights,
            "warnings": list(boot.warnings),
        },
    }
    return AnalysisResult(
        sample=sample,
        balance=balance,
        outcomes=outcomes,
        point_stats=point_stats,
        boot=boot,
        runlog=_jsonable(runlog),
        stage1_fit=fit1,
        stage2_fit=fit2,
    )


def run_analysis(
    cohort_path,
    plan_path,
    out_dir,
    reps: Optional[int] = None,
    seed: Optional[int] = None,
    stratify: bool = True,
    freeze_weights: bool = False,
    n_workers: int = 1,
    dump_reps: Optional[str] = None,
    dump_psmodel: Optional[str] = None,
) -> AnalysisResult:
    """File-level entry point; writes all artifacts into out_dir."""
    plan, defaults_applied = load_plan(plan_path)
    cohort = parse_cohort(cohort_path, plan.covariate_names)
    result = analyze_cohort(
        cohort, plan, defaults_applied,
        reps=reps, seed=seed, stratify=stratify,
        freeze_weights=freeze_weights, n_workers=n_workers,
    )
    os.makedirs(out_dir, exist_ok=True)
    effective_plan = replace(
        plan,
        bootstrap_reps=reps if reps is not None else plan.bootstrap_reps,
        seed=seed if seed is not None else plan.seed,
    )
    _write_balance_csv(os.path.join(out_dir, "balance.csv"), result.balance)
    _write_effects_csv(
        os.path.join(out_dir, "effects.csv"), result.runlog["effects"]
    )
    _write_km_csv(
        os.path.join(out_dir, "km_curves.csv"),
        effective_plan, result.outcomes, result.sample,
    )
    with open(os.path.join(out_dir, "runlog.json"), "w") as fh:
        json.dump(result.runlog, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    if dump_reps:
        _dump_reps_csv(dump_reps, result.boot)
    if dump_psmodel:
        with open(dump_psmodel, "w") as fh:
            json.dump(
                {
                    "stage1": _jsonable(result.stage1_fit.as_dict()),
                    "stage2": _jsonable(result.stage2_fit.as_dict()),
                },
                fh, indent=2, sort_keys=True, allow_nan=False,
            )
            fh.write("\n")
    return result
