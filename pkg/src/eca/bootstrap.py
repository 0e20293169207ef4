"""Patient-level nonparametric bootstrap with percentile confidence intervals.

Line selection is frozen before resampling; by default the stage-2
propensity model (and hence the odds weights) is re-estimated within each
replicate so weight-estimation uncertainty propagates into the intervals.
Replicate r draws its RNG from a substream keyed by (seed, r), so results
are bit-identical regardless of worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .effects import compute_statistics, statistic_names
from .errors import EcaError
from .plan import AnalysisPlan
from .propensity import CovariateEncoder, fit_logistic, predict_ps_encoded
from .weighting import WeightedSample, compute_weights_from_ps

FAILURE_WARN_FRACTION = 0.10
FAILURE_ERROR_FRACTION = 0.50


@dataclass(frozen=True)
class BootstrapConfig:
    reps: int = 10_000
    seed: int = 0
    stratify_by_arm: bool = True
    freeze_weights: bool = False
    n_workers: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")


@dataclass
class BootstrapResult:
    statistics: dict[str, np.ndarray]  # aligned by replicate index; nan = failed
    cis: dict[str, tuple[float, float]]
    n_reps: int
    n_failed: int
    failures: list[tuple[int, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def percentile_ci(replicates, level: float = 0.95) -> tuple[float, float]:
    """Empirical quantiles by nearest rank, averaging on exact fractional ranks."""
    values = np.sort(np.asarray(replicates, dtype=float))
    if values.size == 0:
        raise ValueError("replicates must be non-empty")
    n = values.size

    def quantile(q: float) -> float:
        h = q * n
        nearest = math.ceil(h)
        if abs(h - round(h)) < 1e-9 and 1 <= round(h) < n:
            k = int(round(h))
            return float((values[k - 1] + values[k]) / 2.0)
        k = min(max(nearest, 1), n)
        return float(values[k - 1])

    alpha = (1.0 - level) / 2.0
    return quantile(alpha), quantile(1.0 - alpha)


@dataclass
class _ReplicateContext:
    outcomes: dict
    arms: np.ndarray
    covariate_rows: list[dict]
    base_weights: np.ndarray
    patient_ids: list[str]
    plan: AnalysisPlan
    config: BootstrapConfig


_WORKER_CTX: _ReplicateContext | None = None


def _init_worker(ctx: _ReplicateContext) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _draw_indices(ctx: _ReplicateContext, rng: np.random.Generator) -> np.ndarray:
    n = len(ctx.arms)
    if not ctx.config.stratify_by_arm:
        return rng.integers(0, n, size=n)
    trial_idx = np.flatnonzero(ctx.arms == 1)
    rw_idx = np.flatnonzero(ctx.arms == 0)
    return np.concatenate(
        [
            trial_idx[rng.integers(0, trial_idx.size, size=trial_idx.size)],
            rw_idx[rng.integers(0, rw_idx.size, size=rw_idx.size)],
        ]
    )


def _run_replicate(ctx: _ReplicateContext, rep: int):
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=ctx.config.seed, spawn_key=(rep,))
    )
    idx = _draw_indices(ctx, rng)
    try:
        if ctx.config.freeze_weights:
            weights = ctx.base_weights[idx]
        else:
            rows = [ctx.covariate_rows[i] for i in idx]
            encoder = CovariateEncoder.fit(ctx.plan.covariates, rows)
            Xcov = encoder.encode(rows)
            X = np.column_stack([np.ones(len(rows)), Xcov])
            y = (ctx.arms[idx] == 1).astype(float)
            fit = fit_logistic(X, y, np.arange(len(rows)), encoder.column_names, encoder)
            ps = predict_ps_encoded(fit, X)
            weights = compute_weights_from_ps(
                ps, ctx.arms[idx], [ctx.patient_ids[i] for i in idx]
            )
        return rep, compute_statistics(ctx.outcomes, ctx.arms, weights, idx), None
    except (EcaError, ValueError, np.linalg.LinAlgError) as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


def _replicate_entry(rep: int):
    return _run_replicate(_WORKER_CTX, rep)


def run_bootstrap(
    sample: WeightedSample,
    outcomes: dict,
    plan: AnalysisPlan,
    config: BootstrapConfig,
) -> BootstrapResult:
    """Resample patients with replacement (stratified by arm by default),
    recompute weights and every estimand statistic per replicate, and build
    percentile CIs from the successful replicates."""
    ctx = _ReplicateContext(
        outcomes=outcomes,
        arms=sample.arms,
        covariate_rows=sample.covariate_rows,
        base_weights=sample.weights,
        patient_ids=sample.patient_ids,
        plan=plan,
        config=config,
    )
    names = statistic_names(plan)
    stats = {name: np.full(config.reps, np.nan) for name in names}
    failures: list[tuple[int, str]] = []

    if config.n_workers > 1:
        with ProcessPoolExecutor(
            max_workers=config.n_workers, initializer=_init_worker, initargs=(ctx,)
        ) as pool:
            results = list(pool.map(_replicate_entry, range(config.reps), chunksize=64))
    else:
        results = [_run_replicate(ctx, rep) for rep in range(config.reps)]

    # Reduce in replicate-index order so output is scheduling-invariant.
    for rep, stat, failure in sorted(results, key=lambda r: r[0]):
        if failure is not None:
            failures.append((rep, failure))
            continue
        for name, value in stat.items():
            stats[name][rep] = value

    n_failed = len(failures)
    warnings = []
    if n_failed > FAILURE_ERROR_FRACTION * config.reps:
        raise EcaError(
            f"bootstrap failed in {n_failed}/{config.reps} replicates; "
            "estimates unreliable"
        )
    if n_failed > FAILURE_WARN_FRACTION * config.reps:
        warnings.append(
            f"bootstrap failed in {n_failed}/{config.reps} replicates (>10%)"
        )

    cis: dict[str, tuple[float, float]] = {}
    for name, values in stats.items():
        finite = values[np.isfinite(values)]
        if finite.size == 0:
            cis[name] = (float("nan"), float("nan"))
            continue
        cis[name] = percentile_ci(finite, 0.95)
        if finite.size < config.reps - n_failed:
            warnings.append(
                f"{name}: CI based on {finite.size} finite replicate values"
            )

    return BootstrapResult(
        statistics=stats,
        cis=cis,
        n_reps=config.reps,
        n_failed=n_failed,
        failures=failures,
        warnings=warnings,
    )
