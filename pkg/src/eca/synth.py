"""Synthetic two-cohort generator with known true effects and controllable
confounding, used to exercise the full pipeline without proprietary data.

Event times are exponential with arm- and covariate-dependent hazards, so
the configured log hazard ratios are the true conditional effects (and the
true marginal effects under a null).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

import numpy as np

from .cohort import DAYS_PER_MONTH, Arm, Cohort, LineRecord, PatientRecord, parse_date
from .errors import ConfigError

_BASE_DATE_DAYS = parse_date("2012-01-01")


@dataclass(frozen=True)
class CovariateScenario:
    name: str
    kind: str  # "numeric" | "binary"
    trial_loc: float  # mean (numeric) or prevalence (binary) in the trial arm
    rw_loc: float
    sd: float = 1.0  # numeric only
    hazard_coef: float = 0.0  # log-hazard per unit
    line_drift: float = 0.0  # added per extra line (numeric only)

    def __post_init__(self):
        if self.kind not in ("numeric", "binary"):
            raise ConfigError(f"unknown covariate kind {self.kind!r}")
        if self.kind == "binary":
            for p in (self.trial_loc, self.rw_loc):
                if not 0.0 <= p <= 1.0:
                    raise ConfigError(f"prevalence out of [0,1] for {self.name!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    n_trial: int
    n_rw: int
    seed: int
    covariates: tuple[CovariateScenario, ...]
    base_hazard_os: float = 0.03  # events per month
    base_hazard_prog: float = 0.06
    true_loghr_os: float = 0.0
    true_loghr_pfs: float = 0.0
    response_prob_trial: float = 0.6
    response_prob_rw: float = 0.35
    censor_rate: float = 0.01  # per month; 0 disables random censoring
    followup_cap_months: float = 60.0
    line_dist: tuple[float, ...] = (1.0,)  # P(1 line), P(2 lines), ...
    frac_new_therapy_before_progression: float = 0.0

    def __post_init__(self):
        if self.n_trial < 2 or self.n_rw < 2:
            raise ConfigError("need at least 2 patients per arm")
        if not self.covariates:
            raise ConfigError("scenario needs at least one covariate")
        if abs(sum(self.line_dist) - 1.0) > 1e-9 or any(p < 0 for p in self.line_dist):
            raise ConfigError("line_dist must be a probability vector")
        for p in (self.response_prob_trial, self.response_prob_rw):
            if not 0.0 <= p <= 1.0:
                raise ConfigError("response probabilities must lie in [0,1]")
        if self.censor_rate < 0:
            raise ConfigError("censor_rate must be >= 0")
        if self.base_hazard_os <= 0 or self.base_hazard_prog <= 0:
            raise ConfigError("base hazards must be positive")
        if self.followup_cap_months <= 0:
            raise ConfigError("followup_cap_months must be positive")


@dataclass
class TruthRecord:
    """The parameters and latent quantities the generator committed to."""

    config: ScenarioConfig
    n_lines_rw: int = 0
    n_new_therapy_before_progression: int = 0
    latent_os_months: list[float] = field(default_factory=list)
    latent_prog_months: list[float] = field(default_factory=list)


def _months_to_days(months: float) -> int:
    return int(round(months * DAYS_PER_MONTH))


def _draw_covariates(cov: CovariateScenario, is_trial: bool, line_offset: int,
                     rng: np.random.Generator):
    loc = cov.trial_loc if is_trial else cov.rw_loc
    if cov.kind == "binary":
        return int(rng.random() < loc)
    value = rng.normal(loc + cov.line_drift * line_offset, cov.sd)
    return round(float(value), 6)


def generate_cohort(config: ScenarioConfig) -> tuple[Cohort, TruthRecord]:
    """Deterministic given the seed. Returns the cohort and the truth record."""
    rng = np.random.default_rng(config.seed)
    truth = TruthRecord(config=config)
    patients: list[PatientRecord] = []

    # Decide up front which lines get a new therapy planted strictly before
    # progression, so the planted count is exact.
    line_plan: list[tuple[str, bool, int]] = []  # (pid, is_trial, n_lines)
    for i in range(config.n_trial):
        line_plan.append((f"T{i + 1:04d}", True, 1))
    n_lines_choices = 1 + rng.choice(
        len(config.line_dist), size=config.n_rw, p=np.asarray(config.line_dist)
    )
    for i in range(config.n_rw):
        line_plan.append((f"R{i + 1:04d}", False, int(n_lines_choices[i])))

    total_lines = sum(n for _, _, n in line_plan)
    n_planted = int(round(config.frac_new_therapy_before_progression * total_lines))
    planted_flat = rng.permutation(total_lines) < n_planted
    truth.n_lines_rw = total_lines - config.n_trial
    truth.n_new_therapy_before_progression = int(planted_flat.sum())

    flat_pos = 0
    for pid, is_trial, n_lines in line_plan:
        lines = []
        line_start = _BASE_DATE_DAYS + int(rng.integers(0, 1500))
        for j in range(n_lines):
            covs = {
                c.name: _draw_covariates(c, is_trial, j, rng)
                for c in config.covariates
            }
            lp = sum(
                c.hazard_coef * float(covs[c.name]) for c in config.covariates
            )
            haz_os = config.base_hazard_os * np.exp(
                lp + (config.true_loghr_os if is_trial else 0.0)
            )
            haz_prog = config.base_hazard_prog * np.exp(
                lp + (config.true_loghr_pfs if is_trial else 0.0)
            )
            t_death = float(rng.exponential(1.0 / haz_os))
            t_prog = float(rng.exponential(1.0 / haz_prog))
            truth.latent_os_months.append(t_death)
            truth.latent_prog_months.append(t_prog)
            t_cens = (
                float(rng.exponential(1.0 / config.censor_rate))
                if config.censor_rate > 0
                else float("inf")
            )
            t_cens = min(t_cens, config.followup_cap_months)

            death_date = None
            prog_date = None
            if t_death <= t_cens:
                death_date = line_start + max(_months_to_days(t_death), 1)
            if t_prog < min(t_death, t_cens):
                prog_date = line_start + max(_months_to_days(t_prog), 1)

            new_therapy_date = None
            if planted_flat[flat_pos]:
                # Strictly before progression/death and inside 20 months so
                # administrative censoring at 24 months cannot mask it.
                horizon = min(t_prog, t_death, t_cens, 20.0)
                t_nt = float(rng.uniform(0.05, max(horizon * 0.8, 0.1)))
                nt_days = max(_months_to_days(t_nt), 1)
                limit = min(
                    d - line_start
                    for d in (prog_date, death_date)
                    if d is not None
                ) if (prog_date or death_date) else None
                if limit is not None:
                    nt_days = min(nt_days, limit - 1)
                nt_days = max(nt_days, 0)
                new_therapy_date = line_start + nt_days

            last_candidates = [line_start + _months_to_days(min(t_cens, t_death))]
            for d in (death_date, prog_date, new_therapy_date):
                if d is not None:
                    last_candidates.append(d)
            last_contact = max(last_candidates)

            p_resp = (
                config.response_prob_trial if is_trial else config.response_prob_rw
            )
            responder = rng.random() < p_resp
            if responder:
                best = "CR" if rng.random() < 0.6 else "PR"
                resp_months = float(rng.uniform(1.0, 4.0))
                resp_date = line_start + max(_months_to_days(resp_months), 1)
                ceiling = min(
                    d for d in (prog_date, new_therapy_date, last_contact)
                    if d is not None
                )
                resp_date = min(resp_date, max(ceiling - 1, line_start))
            else:
                best = "SD" if rng.random() < 0.5 else "PD"
                resp_date = line_start + max(
                    _months_to_days(float(rng.uniform(1.0, 4.0))), 1
                )
                resp_date = min(resp_date, last_contact)
            last_contact = max(last_contact, resp_date)

            lines.append(
                LineRecord(
                    patient_id=pid,
                    line_number=j + 1,
                    line_start=line_start,
                    eligible=True,
                    covariates=covs,
                    best_response=best,
                    response_date=resp_date,
                    progression_date=prog_date,
                    new_therapy_date=new_therapy_date,
                    death_date=death_date,
                    last_contact_date=last_contact,
                )
            )
            flat_pos += 1
            line_start = last_contact + int(rng.integers(10, 120))
        patients.append(
            PatientRecord(
                pid, Arm.TRIAL if is_trial else Arm.EXTERNAL_CONTROL, tuple(lines)
            )
        )

    cohort = Cohort(
        tuple(patients), tuple(c.name for c in config.covariates)
    )
    return cohort, truth


def load_scenario(path) -> ScenarioConfig:
    """Read a scenario TOML file."""
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed scenario file: {exc}") from exc
    covs = tuple(
        CovariateScenario(
            name=c["name"],
            kind=c.get("kind", "numeric"),
            trial_loc=float(c["trial_loc"]),
            rw_loc=float(c["rw_loc"]),
            sd=float(c.get("sd", 1.0)),
            hazard_coef=float(c.get("hazard_coef", 0.0)),
            line_drift=float(c.get("line_drift", 0.0)),
        )
        for c in raw.get("covariate", [])
    )
    kwargs = {
        k: raw[k]
        for k in (
            "n_trial", "n_rw", "seed", "base_hazard_os", "base_hazard_prog",
            "true_loghr_os", "true_loghr_pfs", "response_prob_trial",
            "response_prob_rw", "censor_rate", "followup_cap_months",
            "frac_new_therapy_before_progression",
        )
        if k in raw
    }
    if "line_dist" in raw:
        kwargs["line_dist"] = tuple(float(p) for p in raw["line_dist"])
    try:
        return ScenarioConfig(covariates=covs, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"scenario file missing required keys: {exc}") from exc
