import numpy as np
import pytest

from eca.cohort import Arm, Cohort, LineRecord, PatientRecord, parse_date
from eca.plan import (
    AnalysisPlan,
    CovariateSpec,
    Endpoint,
    EstimandSpec,
    IntercurrentStrategy,
    SummaryMeasure,
)

DAY0 = parse_date("2015-01-01")


def months_to_days(months):
    return int(round(months * 30.4375))


def make_line(
    patient_id="P1",
    line_number=1,
    line_start=DAY0,
    eligible=True,
    covariates=None,
    best_response=None,
    response_months=None,
    progression_months=None,
    new_therapy_months=None,
    death_months=None,
    last_contact_months=24.0,
):
    """LineRecord with event offsets given in months from line_start."""

    def at(m):
        return None if m is None else line_start + months_to_days(m)

    dates = [
        at(m)
        for m in (response_months, progression_months, new_therapy_months,
                  death_months, last_contact_months)
        if m is not None
    ]
    last_contact = max([at(last_contact_months)] + dates)
    return LineRecord(
        patient_id=patient_id,
        line_number=line_number,
        line_start=line_start,
        eligible=eligible,
        covariates=covariates or {},
        best_response=best_response,
        response_date=at(response_months),
        progression_date=at(progression_months),
        new_therapy_date=at(new_therapy_months),
        death_date=at(death_months),
        last_contact_date=last_contact,
    )


def make_cohort(trial_rows, rw_rows, covariate_names):
    """trial_rows / rw_rows: list of per-patient lists of LineRecords."""
    patients = []
    for lines in trial_rows:
        patients.append(PatientRecord(lines[0].patient_id, Arm.TRIAL, tuple(lines)))
    for lines in rw_rows:
        patients.append(
            PatientRecord(lines[0].patient_id, Arm.EXTERNAL_CONTROL, tuple(lines))
        )
    return Cohort(tuple(patients), tuple(covariate_names))


def binary_covariate_cohort(counts):
    """Cohort over one binary covariate x.

    counts: dict (arm, x) -> n, e.g. {("T", 1): 3, ("T", 0): 1, ...}.
    Each patient gets a single eligible line.
    """
    trial, rw = [], []
    i = 0
    for (arm, x), n in counts.items():
        for _ in range(n):
            i += 1
            pid = f"{arm}{i}"
            line = make_line(patient_id=pid, covariates={"x": x},
                             death_months=None, last_contact_months=12.0)
            (trial if arm == "T" else rw).append([line])
    return make_cohort(trial, rw, ["x"])


def simple_plan(covariates=None, estimands=None, **kwargs):
    if covariates is None:
        covariates = (CovariateSpec("x", "binary"),)
    estimands = estimands or (
        EstimandSpec(
            Endpoint.OS, IntercurrentStrategy.TREATMENT_POLICY,
            admin_cutoff_months=24.0, landmarks_months=(6.0, 12.0),
            summary=SummaryMeasure.HAZARD_RATIO,
        ),
    )
    kwargs.setdefault("bootstrap_reps", 20)
    kwargs.setdefault("seed", 7)
    return AnalysisPlan(covariates=tuple(covariates), estimands=tuple(estimands),
                        **kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
