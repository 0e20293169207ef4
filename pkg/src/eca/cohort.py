"""Two-cohort longitudinal data model, CSV ingestion, and complete-case filtering.

Dates are stored internally as integer days since 1970-01-01; all durations
are reported in months using a fixed 30.4375 days/month conversion.
"""

from __future__ import annotations

import csv
import datetime
import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .errors import CohortParseError, ConfigError, SchemaViolationError

DAYS_PER_MONTH = 30.4375

_EPOCH = datetime.date(1970, 1, 1)

RESPONSE_LABELS = ("CR", "PR", "SD", "PD", "UNK")

FIXED_COLUMNS = (
    "patient_id",
    "arm",
    "line_number",
    "line_start",
    "eligible",
    "best_response",
    "response_date",
    "progression_date",
    "new_therapy_date",
    "death_date",
    "last_contact_date",
)


class Arm(enum.Enum):
    TRIAL = "TRIAL"
    EXTERNAL_CONTROL = "RW"


def parse_date(text: str) -> int:
    """ISO-8601 date -> days since epoch."""
    d = datetime.date.fromisoformat(text)
    return (d - _EPOCH).days


def format_date(days: int) -> str:
    return (_EPOCH + datetime.timedelta(days=int(days))).isoformat()


def days_to_months(days: float) -> float:
    return days / DAYS_PER_MONTH


@dataclass(frozen=True)
class LineRecord:
    patient_id: str
    line_number: int
    line_start: int
    eligible: bool
    covariates: dict[str, object]
    best_response: Optional[str] = None
    response_date: Optional[int] = None
    progression_date: Optional[int] = None
    new_therapy_date: Optional[int] = None
    death_date: Optional[int] = None
    last_contact_date: int = 0

    def has_missing(self, covariate_names: Iterable[str]) -> bool:
        return any(self.covariates.get(name) is None for name in covariate_names)


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    arm: Arm
    lines: tuple[LineRecord, ...]


@dataclass(frozen=True)
class Cohort:
    patients: tuple[PatientRecord, ...]
    covariate_names: tuple[str, ...]

    def patients_in(self, arm: Arm) -> list[PatientRecord]:
        return [p for p in self.patients if p.arm is arm]

    def n_patients(self, arm: Arm) -> int:
        return len(self.patients_in(arm))


@dataclass
class ExclusionReport:
    """Record of complete-case exclusions, with per-arm tallies."""

    dropped_lines: list[tuple[str, int, str]] = field(default_factory=list)
    dropped_patients: list[tuple[str, str]] = field(default_factory=list)
    lines_dropped_per_arm: dict[str, int] = field(default_factory=dict)
    patients_dropped_per_arm: dict[str, int] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not self.dropped_lines and not self.dropped_patients

    def as_dict(self) -> dict:
        return {
            "dropped_lines": [
                {"patient_id": p, "line_number": n, "reason": r}
                for p, n, r in self.dropped_lines
            ],
            "dropped_patients": [
                {"patient_id": p, "reason": r} for p, r in self.dropped_patients
            ],
            "lines_dropped_per_arm": dict(self.lines_dropped_per_arm),
            "patients_dropped_per_arm": dict(self.patients_dropped_per_arm),
        }


def _parse_optional_date(text: str, row_num: int, col: str) -> Optional[int]:
    if text == "":
        return None
    try:
        return parse_date(text)
    except ValueError as exc:
        raise CohortParseError(f"row {row_num}: bad {col} date {text!r}") from exc


def _check_line_invariants(rec: LineRecord, row_num: int) -> None:
    for col, val in (
        ("progression_date", rec.progression_date),
        ("new_therapy_date", rec.new_therapy_date),
        ("death_date", rec.death_date),
        ("last_contact_date", rec.last_contact_date),
    ):
        if val is not None and val < rec.line_start:
            raise CohortParseError(
                f"row {row_num}: {col} precedes line_start for patient "
                f"{rec.patient_id} line {rec.line_number}"
            )


def parse_cohort(path, covariate_columns: Iterable[str]) -> Cohort:
    """Read the documented CSV schema into a validated Cohort.

    One LineRecord per row; rows are grouped by patient_id. Empty string
    means missing. Raises CohortParseError naming the offending row.
    """
    covariate_columns = tuple(covariate_columns)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise CohortParseError("empty file: header row required")
        missing_cols = [
            c for c in FIXED_COLUMNS + covariate_columns if c not in reader.fieldnames
        ]
        if missing_cols:
            raise CohortParseError(f"missing columns: {', '.join(missing_cols)}")

        by_patient: dict[str, list[LineRecord]] = {}
        arm_of: dict[str, Arm] = {}
        seen: set[tuple[str, int]] = set()
        for row_num, row in enumerate(reader, start=2):
            pid = row["patient_id"]
            if not pid:
                raise CohortParseError(f"row {row_num}: empty patient_id")
            arm_label = row["arm"]
            try:
                arm = Arm(arm_label)
            except ValueError:
                raise CohortParseError(
                    f"row {row_num}: unknown arm label {arm_label!r}"
                ) from None
            if pid in arm_of and arm_of[pid] is not arm:
                raise CohortParseError(
                    f"row {row_num}: patient {pid} appears in both arms"
                )
            arm_of[pid] = arm
            try:
                line_number = int(row["line_number"])
            except ValueError:
                raise CohortParseError(
                    f"row {row_num}: bad line_number {row['line_number']!r}"
                ) from None
            if line_number <= 0:
                raise CohortParseError(f"row {row_num}: line_number must be positive")
            if (pid, line_number) in seen:
                raise CohortParseError(
                    f"row {row_num}: duplicate (patient_id, line_number) "
                    f"({pid}, {line_number})"
                )
            seen.add((pid, line_number))
            if row["eligible"] not in ("0", "1"):
                raise CohortParseError(
                    f"row {row_num}: eligible must be 0 or 1, got {row['eligible']!r}"
                )
            resp = row["best_response"]
            if resp not in RESPONSE_LABELS and resp != "":
                raise CohortParseError(
                    f"row {row_num}: unknown best_response {resp!r}"
                )
            try:
                line_start = parse_date(row["line_start"])
            except ValueError as exc:
                raise CohortParseError(
                    f"row {row_num}: bad line_start date {row['line_start']!r}"
                ) from exc
            last_contact = row["last_contact_date"]
            if last_contact == "":
                raise CohortParseError(f"row {row_num}: last_contact_date required")
            covariates = {
                name: (row[name] if row[name] != "" else None)
                for name in covariate_columns
            }
            rec = LineRecord(
                patient_id=pid,
                line_number=line_number,
                line_start=line_start,
                eligible=row["eligible"] == "1",
                covariates=covariates,
                best_response=resp or None,
                response_date=_parse_optional_date(
                    row["response_date"], row_num, "response_date"
                ),
                progression_date=_parse_optional_date(
                    row["progression_date"], row_num, "progression_date"
                ),
                new_therapy_date=_parse_optional_date(
                    row["new_therapy_date"], row_num, "new_therapy_date"
                ),
                death_date=_parse_optional_date(
                    row["death_date"], row_num, "death_date"
                ),
                last_contact_date=_parse_optional_date(
                    last_contact, row_num, "last_contact_date"
                ),
            )
            _check_line_invariants(rec, row_num)
            by_patient.setdefault(pid, []).append(rec)

    patients = []
    for pid, lines in by_patient.items():
        lines.sort(key=lambda r: r.line_number)
        arm = arm_of[pid]
        if arm is Arm.TRIAL and len(lines) > 1:
            raise SchemaViolationError(
                f"trial patient {pid} has {len(lines)} lines; exactly one allowed"
            )
        patients.append(PatientRecord(pid, arm, tuple(lines)))
    cohort = Cohort(tuple(patients), covariate_columns)
    if not cohort.patients:
        raise CohortParseError("cohort has no patients")
    for arm in Arm:
        if cohort.n_patients(arm) == 0:
            raise CohortParseError(f"cohort has no patients in arm {arm.value}")
    return cohort


def write_cohort(cohort: Cohort, path_or_file) -> None:
    """Serialize a Cohort back to the CSV schema (inverse of parse_cohort).

    Accepts a filesystem path or an open text file object.
    """

    def fmt_date(d: Optional[int]) -> str:
        return "" if d is None else format_date(d)

    if hasattr(path_or_file, "write"):
        _write_cohort_rows(cohort, path_or_file, fmt_date)
        return
    with open(path_or_file, "w", newline="") as fh:
        _write_cohort_rows(cohort, fh, fmt_date)


def _write_cohort_rows(cohort: Cohort, fh, fmt_date) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(list(FIXED_COLUMNS[:5]) + list(cohort.covariate_names)
                    + list(FIXED_COLUMNS[5:]))
    for patient in cohort.patients:
        for rec in patient.lines:
            row = [
                rec.patient_id,
                patient.arm.value,
                rec.line_number,
                format_date(rec.line_start),
                "1" if rec.eligible else "0",
            ]
            row += [
                "" if rec.covariates.get(n) is None else str(rec.covariates[n])
                for n in cohort.covariate_names
            ]
            row += [
                rec.best_response or "",
                fmt_date(rec.response_date),
                fmt_date(rec.progression_date),
                fmt_date(rec.new_therapy_date),
                fmt_date(rec.death_date),
                fmt_date(rec.last_contact_date),
            ]
            writer.writerow(row)


def eligible_lines(patient: PatientRecord) -> list[int]:
    """Line numbers flagged eligible, ascending; first element is the index line."""
    return [rec.line_number for rec in patient.lines if rec.eligible]


def complete_case_filter(
    cohort: Cohort, covariates: Iterable[str]
) -> tuple[Cohort, ExclusionReport]:
    """Drop lines with any missing configured covariate, then empty patients.

    Record-level: a patient keeps any complete lines even if others are
    dropped. Raises ConfigError if an arm is emptied entirely.
    """
    covariates = tuple(covariates)
    unknown = [c for c in covariates if c not in cohort.covariate_names]
    if unknown:
        raise ConfigError(f"covariates not in cohort schema: {', '.join(unknown)}")

    report = ExclusionReport()
    kept_patients = []
    for patient in cohort.patients:
        arm = patient.arm.value
        kept_lines = []
        for rec in patient.lines:
            missing = [c for c in covariates if rec.covariates.get(c) is None]
            if missing:
                report.dropped_lines.append(
                    (patient.patient_id, rec.line_number,
                     f"missing covariate(s): {', '.join(missing)}")
                )
                report.lines_dropped_per_arm[arm] = (
                    report.lines_dropped_per_arm.get(arm, 0) + 1
                )
            else:
                kept_lines.append(rec)
        if kept_lines:
            kept_patients.append(replace(patient, lines=tuple(kept_lines)))
        else:
            report.dropped_patients.append(
                (patient.patient_id, "no lines with complete covariates")
            )
            report.patients_dropped_per_arm[arm] = (
                report.patients_dropped_per_arm.get(arm, 0) + 1
            )

    filtered = Cohort(tuple(kept_patients), cohort.covariate_names)
    for arm in Arm:
        if filtered.n_patients(arm) == 0:
            raise ConfigError(
                f"complete-case filtering removed every patient in arm {arm.value}"
            )
    return filtered, report
