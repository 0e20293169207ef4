"""Analysis plan: endpoints, intercurrent-event strategies, covariates, bootstrap.

Plans are TOML files so statisticians can review and diff them. load_plan
applies documented defaults and records which were applied.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .cohort import Arm, Cohort, LineRecord, parse_date, format_date
from .errors import PlanError

DEFAULT_BOOTSTRAP_REPS = 10_000
DEFAULT_ADMIN_CUTOFF_MONTHS = 24.0
DEFAULT_SMD_THRESHOLD = 0.25


class Endpoint(enum.Enum):
    CR = "CR"
    ORR = "ORR"
    OS = "OS"
    PFS = "PFS"


class IntercurrentStrategy(enum.Enum):
    COMPOSITE_NONRESPONDER = "composite_nonresponder"
    HYPOTHETICAL_CENSOR = "hypothetical_censor"
    COMPOSITE_EVENT = "composite_event"
    TREATMENT_POLICY = "treatment_policy"


class SummaryMeasure(enum.Enum):
    RISK_DIFFERENCE = "risk_difference"
    HAZARD_RATIO = "hazard_ratio"


BINARY_ENDPOINTS = frozenset({Endpoint.CR, Endpoint.ORR})

LEGAL_STRATEGIES = {
    Endpoint.CR: frozenset({IntercurrentStrategy.COMPOSITE_NONRESPONDER}),
    Endpoint.ORR: frozenset({IntercurrentStrategy.COMPOSITE_NONRESPONDER}),
    Endpoint.OS: frozenset({IntercurrentStrategy.TREATMENT_POLICY}),
    Endpoint.PFS: frozenset(
        {IntercurrentStrategy.HYPOTHETICAL_CENSOR, IntercurrentStrategy.COMPOSITE_EVENT}
    ),
}


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    kind: str  # "numeric" | "binary" | "categorical"
    reference: Optional[str] = None  # categorical only

    def __post_init__(self):
        if self.kind not in ("numeric", "binary", "categorical"):
            raise PlanError(f"unknown covariate type {self.kind!r} for {self.name!r}")
        if self.kind == "categorical" and self.reference is None:
            raise PlanError(f"categorical covariate {self.name!r} needs a reference level")
        if self.kind != "categorical" and self.reference is not None:
            raise PlanError(f"reference level only valid for categorical ({self.name!r})")


@dataclass(frozen=True)
class EstimandSpec:
    endpoint: Endpoint
    strategy: IntercurrentStrategy
    admin_cutoff_months: Optional[float] = None
    landmarks_months: tuple[float, ...] = ()
    summary: SummaryMeasure = SummaryMeasure.RISK_DIFFERENCE

    def __post_init__(self):
        if self.strategy not in LEGAL_STRATEGIES[self.endpoint]:
            raise PlanError(
                f"strategy {self.strategy.value!r} not legal for endpoint "
                f"{self.endpoint.value}"
            )
        is_binary = self.endpoint in BINARY_ENDPOINTS
        expected = (
            SummaryMeasure.RISK_DIFFERENCE if is_binary else SummaryMeasure.HAZARD_RATIO
        )
        if self.summary is not expected:
            raise PlanError(
                f"endpoint {self.endpoint.value} requires summary {expected.value}"
            )
        if self.admin_cutoff_months is not None and self.admin_cutoff_months <= 0:
            raise PlanError("admin_cutoff_months must be positive")
        if any(t <= 0 for t in self.landmarks_months):
            raise PlanError("landmark times must be positive")

    @property
    def estimand_id(self) -> str:
        if self.endpoint is Endpoint.PFS:
            return f"PFS_{self.strategy.value}"
        return self.endpoint.value

    @property
    def is_binary(self) -> bool:
        return self.endpoint in BINARY_ENDPOINTS


@dataclass(frozen=True)
class SubgroupFilter:
    """Date and covariate-threshold predicates (no expression language)."""

    line_start_on_or_after: Optional[int] = None  # days since epoch
    covariate: Optional[str] = None
    op: Optional[str] = None  # one of >=, <=, >, <, ==
    value: Optional[object] = None

    _OPS = {"<": lambda a, b: a < b, "<=": lambda a, b: a <= b,
            ">": lambda a, b: a > b, ">=": lambda a, b: a >= b,
            "==": lambda a, b: a == b}

    def __post_init__(self):
        if (self.covariate is None) != (self.op is None) or (
            self.covariate is None
        ) != (self.value is None):
            raise PlanError("subgroup covariate, op, and value must appear together")
        if self.op is not None and self.op not in self._OPS:
            raise PlanError(f"unknown subgroup operator {self.op!r}")
        if self.line_start_on_or_after is None and self.covariate is None:
            raise PlanError("empty subgroup filter")

    def matches(self, line: LineRecord) -> bool:
        if (
            self.line_start_on_or_after is not None
            and line.line_start < self.line_start_on_or_after
        ):
            return False
        if self.covariate is not None:
            raw = line.covariates.get(self.covariate)
            if raw is None:
                return False
            if isinstance(self.value, (int, float)) and not isinstance(self.value, bool):
                try:
                    raw = float(raw)
                except (TypeError, ValueError):
                    return False
            else:
                raw = str(raw)
            return self._OPS[self.op](raw, self.value)
        return True


@dataclass(frozen=True)
class AnalysisPlan:
    covariates: tuple[CovariateSpec, ...]
    estimands: tuple[EstimandSpec, ...]
    subgroup_filter: Optional[SubgroupFilter] = None
    bootstrap_reps: int = DEFAULT_BOOTSTRAP_REPS
    seed: int = 0
    smd_threshold: float = DEFAULT_SMD_THRESHOLD

    def __post_init__(self):
        if self.bootstrap_reps < 1:
            raise PlanError("bootstrap_reps must be >= 1")
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise PlanError("covariate names must be unique")
        ids = [e.estimand_id for e in self.estimands]
        if len(set(ids)) != len(ids):
            raise PlanError("duplicate estimands in plan")

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)


def _build_estimand(raw: dict, defaults_applied: list[str]) -> EstimandSpec:
    try:
        endpoint = Endpoint(raw["endpoint"])
    except (KeyError, ValueError):
        raise PlanError(f"bad or missing endpoint in estimand: {raw!r}") from None
    try:
        strategy = IntercurrentStrategy(raw["strategy"])
    except (KeyError, ValueError):
        raise PlanError(f"bad or missing strategy in estimand: {raw!r}") from None
    is_binary = endpoint in BINARY_ENDPOINTS
    cutoff = raw.get("admin_cutoff_months")
    if cutoff is None and not is_binary:
        cutoff = DEFAULT_ADMIN_CUTOFF_MONTHS
        defaults_applied.append(f"{endpoint.value}.admin_cutoff_months=24")
    landmarks = tuple(float(t) for t in raw.get("landmarks_months", ()))
    summary = (
        SummaryMeasure.RISK_DIFFERENCE if is_binary else SummaryMeasure.HAZARD_RATIO
    )
    return EstimandSpec(
        endpoint=endpoint,
        strategy=strategy,
        admin_cutoff_months=None if cutoff is None else float(cutoff),
        landmarks_months=landmarks,
        summary=summary,
    )


def _build_subgroup(raw: dict) -> SubgroupFilter:
    date_raw = raw.get("line_start_on_or_after")
    date_days = None
    if date_raw is not None:
        try:
            date_days = parse_date(str(date_raw))
        except ValueError:
            raise PlanError(f"bad subgroup date {date_raw!r}") from None
    return SubgroupFilter(
        line_start_on_or_after=date_days,
        covariate=raw.get("covariate"),
        op=raw.get("op"),
        value=raw.get("value"),
    )


def load_plan(path) -> tuple[AnalysisPlan, list[str]]:
    """Parse and validate a TOML plan file.

    Returns (plan, defaults_applied) where defaults_applied lists the
    documented defaults filled in (for the run log).
    """
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise PlanError(f"malformed plan file: {exc}") from exc

    defaults_applied: list[str] = []
    covs = tuple(
        CovariateSpec(
            name=c.get("name", ""),
            kind=c.get("type", ""),
            reference=c.get("reference"),
        )
        for c in raw.get("covariate", [])
    )
    if not covs:
        raise PlanError("plan declares no covariates")
    estimands = tuple(
        _build_estimand(e, defaults_applied) for e in raw.get("estimand", [])
    )
    if not estimands:
        raise PlanError("plan declares no estimands")

    reps = raw.get("bootstrap_reps")
    if reps is None:
        reps = DEFAULT_BOOTSTRAP_REPS
        defaults_applied.append("bootstrap_reps=10000")
    smd = raw.get("smd_threshold")
    if smd is None:
        smd = DEFAULT_SMD_THRESHOLD
        defaults_applied.append("smd_threshold=0.25")
    seed = raw.get("seed")
    if seed is None:
        seed = 0
        defaults_applied.append("seed=0")

    subgroup = None
    if "subgroup" in raw:
        subgroup = _build_subgroup(raw["subgroup"])

    plan = AnalysisPlan(
        covariates=covs,
        estimands=estimands,
        subgroup_filter=subgroup,
        bootstrap_reps=int(reps),
        seed=int(seed),
        smd_threshold=float(smd),
    )
    return plan, defaults_applied


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize_plan(plan: AnalysisPlan) -> str:
    """Emit a TOML document that load_plan reads back to an equal plan."""
    out = [
        f"bootstrap_reps = {plan.bootstrap_reps}",
        f"seed = {plan.seed}",
        f"smd_threshold = {_toml_value(plan.smd_threshold)}",
        "",
    ]
    for c in plan.covariates:
        out.append("[[covariate]]")
        out.append(f"name = {_toml_value(c.name)}")
        out.append(f"type = {_toml_value(c.kind)}")
        if c.reference is not None:
            out.append(f"reference = {_toml_value(c.reference)}")
        out.append("")
    for e in plan.estimands:
        out.append("[[estimand]]")
        out.append(f"endpoint = {_toml_value(e.endpoint.value)}")
        out.append(f"strategy = {_toml_value(e.strategy.value)}")
        if e.admin_cutoff_months is not None:
            out.append(f"admin_cutoff_months = {_toml_value(e.admin_cutoff_months)}")
        if e.landmarks_months:
            out.append(
                "landmarks_months = ["
                + ", ".join(repr(t) for t in e.landmarks_months)
                + "]"
            )
        out.append("")
    sg = plan.subgroup_filter
    if sg is not None:
        out.append("[subgroup]")
        if sg.line_start_on_or_after is not None:
            out.append(
                f'line_start_on_or_after = "{format_date(sg.line_start_on_or_after)}"'
            )
        if sg.covariate is not None:
            out.append(f"covariate = {_toml_value(sg.covariate)}")
            out.append(f"op = {_toml_value(sg.op)}")
            out.append(f"value = {_toml_value(sg.value)}")
        out.append("")
    return "\n".join(out)


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def is_clean(self) -> bool:
        return not self.errors and not self.warnings

    def as_dict(self) -> dict:
        return {"errors": list(self.errors), "warnings": list(self.warnings)}


def validate_plan(plan: AnalysisPlan, cohort: Cohort) -> ValidationReport:
    """Report-only consistency check of a plan against a cohort."""
    report = ValidationReport()
    for cov in plan.covariates:
        if cov.name not in cohort.covariate_names:
            report.errors.append(f"covariate {cov.name!r} not present in cohort")

    if plan.subgroup_filter is not None:
        for arm in Arm:
            n = sum(
                1
                for p in cohort.patients_in(arm)
                if any(plan.subgroup_filter.matches(rec) for rec in p.lines)
            )
            if n == 0:
                report.errors.append(
                    f"subgroup filter excludes every patient in arm {arm.value}"
                )

    for cov in plan.covariates:
        if cov.name not in cohort.covariate_names:
            continue
        for arm in Arm:
            values = {
                rec.covariates.get(cov.name)
                for p in cohort.patients_in(arm)
                for rec in p.lines
                if rec.covariates.get(cov.name) is not None
            }
            if len(values) == 1:
                report.warnings.append(
                    f"covariate {cov.name!r} is constant within arm {arm.value} "
                    "(separation risk)"
                )
    return report


def apply_subgroup_filter(cohort: Cohort, flt: SubgroupFilter) -> Cohort:
    """Keep lines matching the predicate; drop patients with none left.

    Raises ConfigError if an arm is emptied.
    """
    from dataclasses import replace

    from .errors import ConfigError

    kept = []
    for patient in cohort.patients:
        lines = tuple(rec for rec in patient.lines if flt.matches(rec))
        if lines:
            kept.append(replace(patient, lines=lines))
    filtered = Cohort(tuple(kept), cohort.covariate_names)
    for arm in Arm:
        if filtered.n_patients(arm) == 0:
            raise ConfigError(f"subgroup filter removed every patient in arm {arm.value}")
    return filtered
