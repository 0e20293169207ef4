"""Derivation of outcome arrays from a weighted sample and computation of
the per-estimand statistics that the bootstrap resamples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .outcomes import (
    ResponseStatus,
    apply_admin_censor,
    derive_response,
    derive_tte,
)
from .plan import AnalysisPlan, EstimandSpec
from .weighting import WeightedSample
from . import estimators


@dataclass
class BinaryOutcome:
    spec: EstimandSpec
    flags: np.ndarray  # 1 responder, 0 non-responder, nan unevaluable


@dataclass
class TteOutcome:
    spec: EstimandSpec
    times: np.ndarray
    events: np.ndarray  # bool


def build_outcomes(sample: WeightedSample, plan: AnalysisPlan) -> dict[str, object]:
    """Derive every planned estimand's outcome arrays over the selected lines."""
    out: dict[str, object] = {}
    for spec in plan.estimands:
        if spec.is_binary:
            flags = np.empty(len(sample))
            for i, rec in enumerate(sample.lines):
                status = derive_response(rec, spec.endpoint)
                if status is ResponseStatus.UNEVALUABLE:
                    flags[i] = np.nan
                else:
                    flags[i] = 1.0 if status is ResponseStatus.RESPONDER else 0.0
            out[spec.estimand_id] = BinaryOutcome(spec, flags)
        else:
            times = np.empty(len(sample))
            events = np.empty(len(sample), dtype=bool)
            for i, rec in enumerate(sample.lines):
                tte = derive_tte(rec, spec.endpoint, spec.strategy)
                if spec.admin_cutoff_months is not None:
                    tte = apply_admin_censor(tte, spec.admin_cutoff_months)
                times[i] = tte.time_months
                events[i] = tte.event
            out[spec.estimand_id] = TteOutcome(spec, times, events)
    return out


def statistic_names(plan: AnalysisPlan) -> list[str]:
    names = []
    for spec in plan.estimands:
        eid = spec.estimand_id
        if spec.is_binary:
            names += [f"{eid}.trial_rate", f"{eid}.rw_rate", f"{eid}.diff"]
        else:
            names += [f"{eid}.loghr", f"{eid}.median_trial", f"{eid}.median_rw"]
            for t in spec.landmarks_months:
                names += [f"{eid}.landmark_{t:g}_trial", f"{eid}.landmark_{t:g}_rw"]
    return names


def compute_statistics(
    outcomes: dict[str, object],
    arms: np.ndarray,
    weights: np.ndarray,
    idx: np.ndarray = None,
) -> dict[str, float]:
    """Point statistics for every estimand on (a resample of) the sample.

    idx selects rows with repetition for bootstrap replicates; arms and the
    outcome arrays are indexed, weights is already replicate-specific.
    """
    stats: dict[str, float] = {}
    if idx is None:
        idx = np.arange(len(arms))
    arms_r = arms[idx]
    trial = arms_r == 1
    for eid, outcome in outcomes.items():
        if isinstance(outcome, BinaryOutcome):
            flags = outcome.flags[idx]
            t_ok = trial & ~np.isnan(flags)
            r_ok = ~trial & ~np.isnan(flags)
            if not t_ok.any() or not r_ok.any():
                raise ValueError(f"{eid}: an arm has no evaluable responses")
            trial_rate = float(flags[t_ok].mean())
            rw_rate = estimators.weighted_proportion(flags[r_ok], weights[r_ok])
            stats[f"{eid}.trial_rate"] = trial_rate
            stats[f"{eid}.rw_rate"] = rw_rate
            stats[f"{eid}.diff"] = trial_rate - rw_rate
        else:
            times = outcome.times[idx]
            events = outcome.events[idx]
            stats[f"{eid}.loghr"] = estimators.weighted_cox(
                arms_r, times, events, weights
            )
            km_t = estimators.weighted_km(
                times[trial], events[trial], weights[trial],
                outcome.spec.landmarks_months,
            )
            km_r = estimators.weighted_km(
                times[~trial], events[~trial], weights[~trial],
                outcome.spec.landmarks_months,
            )
            stats[f"{eid}.median_trial"] = (
                np.nan if km_t.median is None else km_t.median
            )
            stats[f"{eid}.median_rw"] = np.nan if km_r.median is None else km_r.median
            for t in outcome.spec.landmarks_months:
                stats[f"{eid}.landmark_{t:g}_trial"] = km_t.landmarks[float(t)]
                stats[f"{eid}.landmark_{t:g}_rw"] = km_r.landmarks[float(t)]
    return stats
