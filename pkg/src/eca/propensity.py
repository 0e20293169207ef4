"""Fixed-effects logistic propensity model fitted by IRLS.

Point estimation is plain maximum likelihood (equivalent to GEE with an
independence working correlation); a cluster-robust sandwich covariance is
reported so standard errors account for repeated lines per patient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cohort import Arm, Cohort
from .errors import (
    ConfigError,
    NonConvergenceError,
    SeparationError,
    SingularityError,
)
from .plan import AnalysisPlan, CovariateSpec

SCORE_TOL = 1e-8
LOGLIK_RTOL = 1e-10
MAX_ITER = 100
SEPARATION_COEF = 15.0


def _as_float(name: str, raw) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"covariate {name!r}: non-numeric value {raw!r}") from None


@dataclass
class CovariateEncoder:
    """Encodes raw covariate dicts into design columns.

    Numeric covariates are standardized (mean 0, unit variance over the
    fitting rows); binary covariates are passed through as 0/1; categorical
    covariates are one-hot encoded against their declared reference level.
    Standardization parameters and observed levels are stored so prediction
    applies the identical transform.
    """

    specs: tuple[CovariateSpec, ...]
    column_names: list[str] = field(default_factory=list)
    numeric_params: dict[str, tuple[float, float]] = field(default_factory=dict)
    levels: dict[str, list[str]] = field(default_factory=dict)

    @classmethod
    def fit(cls, specs: Sequence[CovariateSpec], rows: Sequence[dict]) -> "CovariateEncoder":
        enc = cls(specs=tuple(specs))
        for spec in specs:
            if spec.kind == "numeric":
                vals = np.array([_as_float(spec.name, r[spec.name]) for r in rows])
                mean = float(vals.mean())
                sd = float(vals.std())
                if sd == 0.0:
                    raise ConfigError(f"covariate {spec.name!r} is constant")
                enc.numeric_params[spec.name] = (mean, sd)
                enc.column_names.append(spec.name)
            elif spec.kind == "binary":
                vals = {_as_float(spec.name, r[spec.name]) for r in rows}
                if not vals <= {0.0, 1.0}:
                    raise ConfigError(
                        f"binary covariate {spec.name!r} has values outside {{0,1}}"
                    )
                if len(vals) == 1:
                    raise ConfigError(f"covariate {spec.name!r} is constant")
                enc.column_names.append(spec.name)
            else:  # categorical
                observed = sorted({str(r[spec.name]) for r in rows})
                non_ref = [lvl for lvl in observed if lvl != spec.reference]
                if not non_ref or len(observed) == 1:
                    raise ConfigError(f"covariate {spec.name!r} is constant")
                enc.levels[spec.name] = non_ref
                enc.column_names.extend(f"{spec.name}={lvl}" for lvl in non_ref)
        return enc

    @property
    def n_columns(self) -> int:
        return len(self.column_names)

    def encode_row(self, raw: dict) -> np.ndarray:
        out = np.empty(self.n_columns)
        j = 0
        for spec in self.specs:
            if spec.kind == "numeric":
                mean, sd = self.numeric_params[spec.name]
                out[j] = (_as_float(spec.name, raw[spec.name]) - mean) / sd
                j += 1
            elif spec.kind == "binary":
                out[j] = _as_float(spec.name, raw[spec.name])
                j += 1
            else:
                value = str(raw[spec.name])
                non_ref = self.levels[spec.name]
                if value != spec.reference and value not in non_ref:
                    raise ConfigError(
                        f"covariate {spec.name!r}: unseen category {value!r}"
                    )
                for lvl in non_ref:
                    out[j] = 1.0 if value == lvl else 0.0
                    j += 1
        return out

    def encode(self, rows: Sequence[dict]) -> np.ndarray:
        return np.array([self.encode_row(r) for r in rows]).reshape(len(rows), self.n_columns)

    def params_dict(self) -> dict:
        return {
            "columns": list(self.column_names),
            "numeric_standardization": {
                k: {"mean": m, "sd": s} for k, (m, s) in self.numeric_params.items()
            },
            "categorical_levels": {k: list(v) for k, v in self.levels.items()},
        }


@dataclass
class DesignMatrix:
    X: np.ndarray  # includes leading intercept column
    y: np.ndarray
    clusters: np.ndarray  # patient ids, one per row
    row_labels: list[tuple[str, int]]  # (patient_id, line_number)
    column_names: list[str]  # excludes intercept
    encoder: CovariateEncoder


def build_design(
    cohort: Cohort,
    plan: AnalysisPlan,
    lines_by_patient: Optional[dict[str, list[int]]] = None,
) -> DesignMatrix:
    """Assemble the propensity design: one row per (patient, line).

    Trial patients contribute their single line; external patients
    contribute the lines in lines_by_patient (default: all eligible lines).
    """
    from .cohort import eligible_lines

    rows_raw: list[dict] = []
    labels: list[tuple[str, int]] = []
    y: list[int] = []
    clusters: list[str] = []
    for patient in cohort.patients:
        if patient.arm is Arm.TRIAL:
            wanted = [patient.lines[0].line_number]
        elif lines_by_patient is not None:
            wanted = lines_by_patient.get(patient.patient_id, [])
        else:
            wanted = eligible_lines(patient)
        by_number = {rec.line_number: rec for rec in patient.lines}
        for ln in wanted:
            rec = by_number[ln]
            rows_raw.append(rec.covariates)
            labels.append((patient.patient_id, ln))
            y.append(1 if patient.arm is Arm.TRIAL else 0)
            clusters.append(patient.patient_id)

    encoder = CovariateEncoder.fit(plan.covariates, rows_raw)
    Xcov = encoder.encode(rows_raw)
    # Re-check constancy after encoding (a categorical level can vanish).
    for j, name in enumerate(encoder.column_names):
        if np.all(Xcov[:, j] == Xcov[0, j]):
            raise ConfigError(f"design column {name!r} is constant")
    X = np.column_stack([np.ones(len(rows_raw)), Xcov])
    return DesignMatrix(
        X=X,
        y=np.asarray(y, dtype=float),
        clusters=np.asarray(clusters, dtype=object),
        row_labels=labels,
        column_names=list(encoder.column_names),
        encoder=encoder,
    )


@dataclass
class PsFit:
    intercept: float
    coefficients: np.ndarray  # excludes intercept, ordered as column_names
    column_names: list[str]
    model_covariance: np.ndarray
    sandwich_covariance: np.ndarray
    converged: bool
    iterations: int
    max_abs_coef: float
    log_likelihood: float
    encoder: CovariateEncoder

    @property
    def beta(self) -> np.ndarray:
        """Full coefficient vector, intercept first."""
        return np.concatenate([[self.intercept], self.coefficients])

    def as_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "coefficients": dict(zip(self.column_names, self.coefficients.tolist())),
            "model_covariance": self.model_covariance.tolist(),
            "sandwich_covariance": self.sandwich_covariance.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "log_likelihood": self.log_likelihood,
            "encoding": self.encoder.params_dict(),
        }


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -35.0, 35.0)))


def _bernoulli_loglik(y: np.ndarray, p: np.ndarray) -> float:
    eps = 1e-300
    return float(np.sum(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))


def cluster_sandwich(
    X: np.ndarray, y: np.ndarray, p: np.ndarray, clusters: np.ndarray
) -> np.ndarray:
    """B^-1 M B^-1 with score contributions aggregated per cluster."""
    w = p * (1 - p)
    B = (X * w[:, None]).T @ X
    resid = y - p
    meat = np.zeros((X.shape[1], X.shape[1]))
    for cid in np.unique(clusters):
        mask = clusters == cid
        u = X[mask].T @ resid[mask]
        meat += np.outer(u, u)
    Binv = np.linalg.inv(B)
    return Binv @ meat @ Binv


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    clusters: np.ndarray,
    column_names: Optional[list[str]] = None,
    encoder: Optional[CovariateEncoder] = None,
) -> PsFit:
    """Maximize the Bernoulli log-likelihood by IRLS.

    Convergence: max |score| < 1e-8 or relative log-likelihood change
    < 1e-10, at most 100 iterations. Separation is flagged when any
    standardized coefficient exceeds 15 in absolute value while the
    likelihood is still improving.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if not (np.any(y == 1) and np.any(y == 0)):
        raise ConfigError("need at least one row per label value")
    if column_names is None:
        column_names = [f"x{j}" for j in range(1, k)]

    beta = np.zeros(k)
    ll_prev = -np.inf
    converged = False
    iterations = 0
    for iterations in range(1, MAX_ITER + 1):
        eta = X @ beta
        p = _sigmoid(eta)
        score = X.T @ (y - p)
        ll = _bernoulli_loglik(y, p)

        big = np.abs(beta) > SEPARATION_COEF
        if np.any(big) and ll > ll_prev + 1e-12:
            offenders = [
                (["(intercept)"] + list(column_names))[j]
                for j in range(k)
                if big[j]
            ]
            raise SeparationError(
                "separation detected: coefficient(s) diverging for "
                + ", ".join(offenders),
                covariates=offenders,
            )

        if np.max(np.abs(score)) < SCORE_TOL:
            converged = True
            break
        if np.isfinite(ll_prev) and abs(ll - ll_prev) < LOGLIK_RTOL * (abs(ll) + 1.0):
            converged = True
            break

        w = np.clip(p * (1 - p), 1e-12, None)
        B = (X * w[:, None]).T @ X
        if np.linalg.cond(B) > 1e12:
            raise SingularityError("singular weighted normal equations")
        try:
            delta = np.linalg.solve(B, score)
        except np.linalg.LinAlgError as exc:
            raise SingularityError("singular weighted normal equations") from exc

        # Step-halving safeguard.
        step = 1.0
        for _ in range(30):
            cand = beta + step * delta
            if _bernoulli_loglik(y, _sigmoid(X @ cand)) >= ll - 1e-12:
                break
            step /= 2.0
        beta = beta + step * delta
        ll_prev = ll
    else:
        raise NonConvergenceError(f"IRLS did not converge in {MAX_ITER} iterations")

    p = _sigmoid(X @ beta)
    w = np.clip(p * (1 - p), 1e-12, None)
    B = (X * w[:, None]).T @ X
    model_cov = np.linalg.inv(B)
    sandwich = cluster_sandwich(X, y, p, np.asarray(clusters, dtype=object))

    return PsFit(
        intercept=float(beta[0]),
        coefficients=beta[1:].copy(),
        column_names=list(column_names),
        model_covariance=model_cov,
        sandwich_covariance=sandwich,
        converged=converged,
        iterations=iterations,
        max_abs_coef=float(np.max(np.abs(beta))),
        log_likelihood=_bernoulli_loglik(y, p),
        encoder=encoder if encoder is not None else CovariateEncoder(specs=()),
    )


def fit_design(design: DesignMatrix) -> PsFit:
    return fit_logistic(
        design.X, design.y, design.clusters, design.column_names, design.encoder
    )


def predict_ps(fit: PsFit, raw_row: dict) -> float:
    """Propensity score for one raw covariate row, in (0, 1)."""
    if not fit.converged:
        raise ConfigError("propensity fit did not converge; prediction blocked")
    x = fit.encoder.encode_row(raw_row)
    eta = fit.intercept + float(x @ fit.coefficients)
    return float(_sigmoid(np.array([eta]))[0])


def predict_ps_encoded(fit: PsFit, X: np.ndarray) -> np.ndarray:
    """Propensity scores for already-encoded rows (intercept column included)."""
    return _sigmoid(X @ fit.beta)
