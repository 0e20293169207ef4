"""Weighted effect estimators: risk difference, product-limit survival, and
the replication-weighted Cox partial likelihood (Breslow ties).

Confidence intervals are deliberately absent here; they come from the
bootstrap module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import SeparationError

COX_SCORE_TOL = 1e-8
COX_MAX_ITER = 50
COX_SEPARATION_COEF = 10.0


def weighted_proportion_diff(trial_flags, rw_flags, rw_weights) -> float:
    """p_trial - weighted p_rw."""
    trial_flags = np.asarray(trial_flags, dtype=float)
    rw_flags = np.asarray(rw_flags, dtype=float)
    w = np.asarray(rw_weights, dtype=float)
    if trial_flags.size == 0 or w.sum() <= 0:
        raise ValueError("empty group or zero total weight")
    return float(trial_flags.mean() - (w @ rw_flags) / w.sum())


def weighted_proportion(flags, weights) -> float:
    flags = np.asarray(flags, dtype=float)
    w = np.asarray(weights, dtype=float)
    if w.sum() <= 0:
        raise ValueError("zero total weight")
    return float((w @ flags) / w.sum())


@dataclass
class KmCurve:
    """Step points of the weighted product-limit estimator.

    Steps are recorded at event times only; censorings at a tied time are
    processed after events (they stay in that risk set).
    """

    times: np.ndarray
    survival: np.ndarray
    at_risk_weight: np.ndarray
    event_weight: np.ndarray
    median: Optional[float]
    landmarks: dict[float, float]

    def survival_at(self, t: float) -> float:
        """Right-continuous step evaluation: last step at or before t."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        return 1.0 if idx < 0 else float(self.survival[idx])


def _risk_set_stats(times, events, weights):
    """Per unique event time: weighted event count and weighted at-risk sums.

    Censorings tied with an event time stay in that risk set (events are
    processed first).
    """
    order = np.argsort(times, kind="stable")
    ts = times[order]
    ws = weights[order]
    evs = events[order]
    # Suffix weight sums: at_risk(t) = sum of w over times >= t.
    suffix = np.concatenate([np.cumsum(ws[::-1])[::-1], [0.0]])
    event_times = np.unique(ts[evs])
    idx = np.searchsorted(ts, event_times, side="left")
    at_risk = suffix[idx]
    w_events = np.where(evs, ws, 0.0)
    csum = np.concatenate([[0.0], np.cumsum(w_events)])
    hi = np.searchsorted(ts, event_times, side="right")
    d_w = csum[hi] - csum[idx]
    return event_times, d_w, at_risk, order, ts, ws, evs


def weighted_km(times, events, weights, landmarks: Sequence[float] = ()) -> KmCurve:
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    weights = np.asarray(weights, dtype=float)
    if times.size != events.size or times.size != weights.size:
        raise ValueError("times, events, weights must have equal length")
    if np.any(times < 0):
        raise ValueError("negative times")
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")

    event_times, d_w, at_risk, *_ = _risk_set_stats(times, events, weights)
    surv_arr = np.cumprod(1.0 - d_w / at_risk)

    median = None
    below = np.flatnonzero(surv_arr <= 0.5 + 1e-12)
    if below.size:
        median = float(event_times[below[0]])

    curve = KmCurve(
        times=event_times,
        survival=surv_arr,
        at_risk_weight=at_risk,
        event_weight=d_w,
        median=median,
        landmarks={},
    )
    curve.landmarks = {float(t): curve.survival_at(float(t)) for t in landmarks}
    return curve


def _cox_loglik_parts(beta: float, stats):
    """Log-likelihood, score, and information of the Breslow partial
    likelihood for a single binary regressor."""
    d_w, d_w_treat, risk_c, risk_t = stats
    eb = np.exp(beta)
    s0 = risk_c + risk_t * eb
    ll = float(np.sum(d_w_treat * beta - d_w * np.log(s0)))
    frac = risk_t * eb / s0
    score = float(np.sum(d_w_treat - d_w * frac))
    info = float(np.sum(d_w * frac * (1.0 - frac)))
    return ll, score, info


def _cox_event_stats(treat, times, events, weights):
    """Weighted event and at-risk sums per unique event time, per arm."""
    treat = np.asarray(treat, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    weights = np.asarray(weights, dtype=float)
    t_mask = treat == 1
    ev_t, dw_t, risk_t, *_ = _risk_set_stats(
        times[t_mask], events[t_mask], weights[t_mask]
    )
    ev_c, dw_c, risk_c, *_ = _risk_set_stats(
        times[~t_mask], events[~t_mask], weights[~t_mask]
    )
    event_times = np.union1d(ev_t, ev_c)

    def expand(src_times, values):
        d = np.zeros(event_times.size)
        d[np.searchsorted(event_times, src_times)] = values
        return d

    d_w_treat = expand(ev_t, dw_t)
    d_w_ctrl = expand(ev_c, dw_c)

    def at_risk_at(mask, ts_query):
        ts_arm = np.sort(times[mask])
        w_arm = weights[mask][np.argsort(times[mask], kind="stable")]
        suffix = np.concatenate([np.cumsum(w_arm[::-1])[::-1], [0.0]])
        return suffix[np.searchsorted(ts_arm, ts_query, side="left")]

    risk_t_all = at_risk_at(t_mask, event_times)
    risk_c_all = at_risk_at(~t_mask, event_times)
    return (d_w_treat + d_w_ctrl, d_w_treat, risk_c_all, risk_t_all)


def weighted_cox(treat, times, events, weights) -> float:
    """Log hazard ratio (treatment vs control) from the replication-weighted
    Cox partial likelihood, Breslow tie handling, safeguarded Newton."""
    treat = np.asarray(treat, dtype=float)
    events = np.asarray(events, dtype=bool)
    if not events.any():
        raise ValueError("no events in data")
    if not (np.any(treat == 1) and np.any(treat == 0)):
        raise ValueError("both arms must be present")

    stats = _cox_event_stats(treat, times, events, weights)
    beta = 0.0
    ll, score, info = _cox_loglik_parts(beta, stats)
    for _ in range(COX_MAX_ITER):
        if abs(beta) > COX_SEPARATION_COEF:
            raise SeparationError(
                "monotone Cox partial likelihood: arms perfectly separated in time"
            )
        if abs(score) < COX_SCORE_TOL:
            return beta
        if info <= 0:
            raise SeparationError("degenerate Cox information (no contrast in risk sets)")
        delta = score / info
        step = 1.0
        for _ in range(40):
            cand = beta + step * delta
            cand_ll, cand_score, cand_info = _cox_loglik_parts(cand, stats)
            if cand_ll >= ll - 1e-12:
                break
            step /= 2.0
        beta, ll, score, info = cand, cand_ll, cand_score, cand_info
    if abs(score) < COX_SCORE_TOL and abs(beta) <= COX_SEPARATION_COEF:
        return beta
    raise SeparationError(
        "Cox partial likelihood did not converge (monotone likelihood suspected)"
    )


def cox_loglik(beta: float, treat, times, events, weights) -> float:
    """Breslow partial log-likelihood at a given log HR (grid-search oracle hook)."""
    stats = _cox_event_stats(treat, times, events, weights)
    ll, _, _ = _cox_loglik_parts(beta, stats)
    return float(ll)
