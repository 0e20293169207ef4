"""Line selection by highest propensity score, odds weighting, and balance
diagnostics (standardized mean differences, effective sample size)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cohort import Arm, Cohort, LineRecord, eligible_lines
from .errors import ExtremeWeightError
from .plan import AnalysisPlan
from .propensity import DesignMatrix, PsFit, build_design, fit_design, predict_ps_encoded

EXTREME_PS = 1.0 - 1e-12


def select_line(ps_by_line: dict[int, float]) -> int:
    """Line with the highest propensity score; ties go to the earliest line."""
    if not ps_by_line:
        raise ValueError("ps_by_line must be non-empty")
    best = max(sorted(ps_by_line), key=lambda ln: (ps_by_line[ln], -ln))
    return best


def odds_weight(e: float) -> float:
    if not 0.0 < e < 1.0:
        raise ValueError(f"propensity score must lie in (0, 1), got {e}")
    return e / (1.0 - e)


def effective_sample_size(weights) -> float:
    """Kish formula (sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise ValueError("weights must be non-empty")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return float(w.sum() ** 2 / (w ** 2).sum())


def _weighted_mean_var(vals: np.ndarray, weights: Optional[np.ndarray]):
    if weights is None:
        mean = float(vals.mean())
        var = float(vals.var(ddof=1)) if vals.size > 1 else 0.0
        return mean, var
    w = weights / weights.sum()
    mean = float(w @ vals)
    var = float(w @ (vals - mean) ** 2)
    return mean, var


def smd(trial_vals, rw_vals, rw_weights=None) -> float:
    """Absolute standardized mean difference with a pooled-SD denominator.

    Weighted rows use normalized weights for both the RW mean and variance.
    A zero pooled SD makes the SMD undefined: returns nan (flagged upstream,
    never raised).
    """
    trial_vals = np.asarray(trial_vals, dtype=float)
    rw_vals = np.asarray(rw_vals, dtype=float)
    if trial_vals.size == 0 or rw_vals.size == 0:
        raise ValueError("both groups must be non-empty")
    w = None if rw_weights is None else np.asarray(rw_weights, dtype=float)
    mean_t, var_t = _weighted_mean_var(trial_vals, None)
    mean_rw, var_rw = _weighted_mean_var(rw_vals, w)
    pooled = np.sqrt((var_t + var_rw) / 2.0)
    if pooled == 0.0:
        return 0.0 if mean_t == mean_rw else float("nan")
    return abs(mean_t - mean_rw) / float(pooled)


@dataclass(frozen=True)
class BalanceRow:
    column: str
    trial_mean: float
    trial_sd: float
    rw_pre_mean: float
    rw_pre_sd: float
    rw_post_mean: float
    rw_post_sd: float
    smd_pre: float
    smd_post: float


@dataclass
class WeightedSample:
    """One row per patient after line selection: trial rows carry weight 1,
    external rows carry the odds weight from the stage-2 propensity fit."""

    patient_ids: list[str]
    arms: np.ndarray  # 1 = trial, 0 = external control
    line_numbers: np.ndarray
    propensity: np.ndarray
    weights: np.ndarray
    lines: list[LineRecord]
    covariate_rows: list[dict]

    def __len__(self) -> int:
        return len(self.patient_ids)

    @property
    def rw_mask(self) -> np.ndarray:
        return self.arms == 0

    def rw_weight_sum(self) -> float:
        return float(self.weights[self.rw_mask].sum())

    def rw_ess(self) -> float:
        return effective_sample_size(self.weights[self.rw_mask])


def compute_weights_from_ps(ps: np.ndarray, arms: np.ndarray,
                            patient_ids) -> np.ndarray:
    """Odds weights for external rows, 1.0 for trial rows."""
    weights = np.ones(len(ps))
    for i in np.flatnonzero(arms == 0):
        if ps[i] >= EXTREME_PS:
            raise ExtremeWeightError(
                f"propensity score {ps[i]} too close to 1 for patient {patient_ids[i]}"
            )
        weights[i] = odds_weight(float(ps[i]))
    return weights


def balance_table(sample: WeightedSample, plan: AnalysisPlan,
                  encoder) -> list[BalanceRow]:
    """Per design column: trial vs external means/SDs, pre- and post-weight SMDs."""
    X = encoder.encode(sample.covariate_rows)
    # Report on the raw (unstandardized) scale so means are interpretable.
    for j, name in enumerate(encoder.column_names):
        if name in encoder.numeric_params:
            mean, sd = encoder.numeric_params[name]
            X[:, j] = X[:, j] * sd + mean
    trial = sample.arms == 1
    rows = []
    w_post = sample.weights[~trial]
    for j, name in enumerate(encoder.column_names):
        tv = X[trial, j]
        rv = X[~trial, j]
        t_mean, t_var = _weighted_mean_var(tv, None)
        pre_mean, pre_var = _weighted_mean_var(rv, None)
        post_mean, post_var = _weighted_mean_var(rv, w_post)
        rows.append(
            BalanceRow(
                column=name,
                trial_mean=t_mean,
                trial_sd=float(np.sqrt(t_var)),
                rw_pre_mean=pre_mean,
                rw_pre_sd=float(np.sqrt(pre_var)),
                rw_post_mean=post_mean,
                rw_post_sd=float(np.sqrt(post_var)),
                smd_pre=smd(tv, rv),
                smd_post=smd(tv, rv, w_post),
            )
        )
    return rows


def build_weighted_sample(
    cohort: Cohort, stage1_fit: PsFit, stage1_design: DesignMatrix, plan: AnalysisPlan
) -> tuple[WeightedSample, list[BalanceRow], PsFit]:
    """Select one line per external patient by highest stage-1 propensity
    score, re-fit the propensity model on the one-row-per-patient dataset,
    and attach odds weights from the stage-2 scores."""
    ps_all = predict_ps_encoded(stage1_fit, stage1_design.X)
    ps_by_patient: dict[str, dict[int, float]] = {}
    for (pid, ln), e in zip(stage1_design.row_labels, ps_all):
        ps_by_patient.setdefault(pid, {})[ln] = float(e)

    selected: dict[str, list[int]] = {}
    for patient in cohort.patients_in(Arm.EXTERNAL_CONTROL):
        lines = eligible_lines(patient)
        if not lines:
            continue
        ps_map = {ln: ps_by_patient[patient.patient_id][ln] for ln in lines}
        selected[patient.patient_id] = [select_line(ps_map)]

    stage2_design = build_design(cohort, plan, lines_by_patient=selected)
    stage2_fit = fit_design(stage2_design)
    ps2 = predict_ps_encoded(stage2_fit, stage2_design.X)

    patient_ids = [pid for pid, _ in stage2_design.row_labels]
    arms = stage2_design.y.astype(int)
    weights = compute_weights_from_ps(ps2, arms, patient_ids)

    lines_by_patient = {
        p.patient_id: {rec.line_number: rec for rec in p.lines}
        for p in cohort.patients
    }
    line_records = [
        lines_by_patient[pid][ln] for pid, ln in stage2_design.row_labels
    ]
    sample = WeightedSample(
        patient_ids=patient_ids,
        arms=arms,
        line_numbers=np.array([ln for _, ln in stage2_design.row_labels]),
        propensity=ps2,
        weights=weights,
        lines=line_records,
        covariate_rows=[rec.covariates for rec in line_records],
    )
    balance = balance_table(sample, plan, stage2_design.encoder)
    return sample, balance, stage2_fit
