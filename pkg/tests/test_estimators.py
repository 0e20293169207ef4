import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eca.errors import SeparationError
from eca.estimators import (
    cox_loglik,
    weighted_cox,
    weighted_km,
    weighted_proportion_diff,
)


class TestProportionDiff:
    def test_worked_example(self):
        trial = [1] * 7 + [0] * 3
        assert weighted_proportion_diff(trial, [1, 0], [1, 3]) == pytest.approx(0.45)

    def test_identical_groups(self):
        assert weighted_proportion_diff([1, 0], [1, 0], [1, 1]) == pytest.approx(0.0)

    def test_equal_weights_reduce_to_unweighted(self):
        rw = [1, 1, 0, 0, 1]
        a = weighted_proportion_diff([1, 0, 1], rw, [2.0] * 5)
        b = weighted_proportion_diff([1, 0, 1], rw, [1.0] * 5)
        assert a == pytest.approx(b)


def km_oracle(times, events):
    """Literal product-limit by subject counting, unit weights.

    Returns survival evaluated at each integer time 1..4.
    """
    out = []
    s = 1.0
    prev = 0.0
    for t in sorted({t for t, e in zip(times, events) if e}):
        n = sum(1 for ti in times if ti >= t)
        d = sum(1 for ti, ei in zip(times, events) if ti == t and ei)
        s *= 1 - d / n
        out.append((t, s))
    def survival_at(q):
        val = 1.0
        for t, s in out:
            if t <= q:
                val = s
        return val
    return [survival_at(q) for q in (1, 2, 3, 4)]


class TestKm:
    def test_hand_example_unit_weights(self):
        curve = weighted_km([1, 1.5, 2], [True, False, True], [1, 1, 1])
        assert curve.survival == pytest.approx([2 / 3, 0.0])
        assert curve.median == 2

    def test_hand_example_weighted(self):
        curve = weighted_km([1, 1.5, 2], [True, False, True], [2, 1, 1])
        assert curve.survival == pytest.approx([0.5, 0.0])
        assert curve.median == 1

    def test_all_censored(self):
        curve = weighted_km([1, 2, 3], [False] * 3, [1, 1, 1])
        assert curve.median is None
        assert curve.survival_at(5) == 1.0

    def test_matches_oracle_exhaustively_small(self):
        # all datasets of <= 4 subjects here; the acceptance suite goes to 6
        pairs = list(itertools.product([1, 2, 3, 4], [True, False]))
        for n in (1, 2, 3, 4):
            for data in itertools.combinations_with_replacement(pairs, n):
                times = [float(t) for t, _ in data]
                events = [e for _, e in data]
                curve = weighted_km(times, events, [1.0] * n)
                expected = km_oracle(times, events)
                got = [curve.survival_at(q) for q in (1, 2, 3, 4)]
                assert got == pytest.approx(expected, abs=1e-12)

    def test_landmarks_right_continuous(self):
        curve = weighted_km([2, 4], [True, True], [1, 1], landmarks=(1, 2, 3))
        assert curve.landmarks[1] == 1.0
        assert curve.landmarks[2] == 0.5
        assert curve.landmarks[3] == 0.5

    @given(
        st.lists(
            st.tuples(st.floats(0.1, 20), st.booleans(), st.floats(0.1, 5)),
            min_size=2, max_size=12,
        ),
        st.floats(0.1, 10),
    )
    @settings(max_examples=50)
    def test_weight_scale_invariance(self, rows, c):
        times = [r[0] for r in rows]
        events = [r[1] for r in rows]
        weights = [r[2] for r in rows]
        a = weighted_km(times, events, weights)
        b = weighted_km(times, events, [w * c for w in weights])
        assert a.survival == pytest.approx(b.survival, rel=1e-10)


def grid_search_cox(treat, times, events, weights, lo=-8.0, hi=8.0):
    best = 0.0
    for _ in range(5):
        grid = np.linspace(lo, hi, 801)
        lls = [cox_loglik(b, treat, times, events, weights) for b in grid]
        best = grid[int(np.argmax(lls))]
        step = grid[1] - grid[0]
        lo, hi = best - 2 * step, best + 2 * step
    return best


def random_cox_instance(rng, n=20):
    treat = rng.integers(0, 2, n)
    times = rng.integers(1, 9, n).astype(float)
    events = rng.random(n) < 0.7
    weights = rng.uniform(0.5, 3.0, n)
    return treat, times, events, weights


class TestCox:
    def test_symmetric_arms_zero(self):
        treat = [1, 1, 0, 0]
        assert weighted_cox(treat, [1, 2, 1, 2], [True] * 4, [1] * 4) == pytest.approx(
            0.0, abs=1e-10
        )

    def test_matches_grid_search(self):
        treat = [1, 1, 0, 0]
        times = [1, 3, 2, 4]
        events = [True] * 4
        beta = weighted_cox(treat, times, events, [1] * 4)
        assert beta == pytest.approx(
            grid_search_cox(treat, times, events, [1] * 4), abs=1e-6
        )

    def test_matches_grid_search_random(self):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 10:
            treat, times, events, weights = random_cox_instance(rng)
            if not events.any() or treat.min() == treat.max():
                continue
            try:
                beta = weighted_cox(treat, times, events, weights)
            except SeparationError:
                continue
            assert beta == pytest.approx(
                grid_search_cox(treat, times, events, weights), abs=1e-6
            )
            checked += 1

    def test_replication_weight_identity(self):
        rng = np.random.default_rng(7)
        treat, times, events, _ = random_cox_instance(rng, 15)
        dup = slice(0, 6)
        b_dup = weighted_cox(
            np.r_[treat, treat[dup]],
            np.r_[times, times[dup]],
            np.r_[events, events[dup]],
            np.ones(21),
        )
        w = np.ones(15)
        w[dup] = 2.0
        b_w = weighted_cox(treat, times, events, w)
        assert b_dup == pytest.approx(b_w, abs=1e-9)

    def test_two_subject_separation(self):
        with pytest.raises(SeparationError):
            weighted_cox([1, 0], [2, 1], [True, True], [1, 1])

    def test_no_events_rejected(self):
        with pytest.raises(ValueError):
            weighted_cox([1, 0], [1, 2], [False, False], [1, 1])

    def test_time_scale_invariance(self):
        rng = np.random.default_rng(9)
        treat, times, events, weights = random_cox_instance(rng)
        a = weighted_cox(treat, times, events, weights)
        b = weighted_cox(treat, times * 7.3, events, weights)
        assert a == pytest.approx(b, abs=1e-8)

    def test_weight_scale_invariance(self):
        rng = np.random.default_rng(13)
        treat, times, events, weights = random_cox_instance(rng)
        a = weighted_cox(treat, times, events, weights)
        b = weighted_cox(treat, times, events, weights * 11.0)
        assert a == pytest.approx(b, abs=1e-8)

    def test_score_zero_and_concave_at_solution(self):
        rng = np.random.default_rng(21)
        treat, times, events, weights = random_cox_instance(rng)
        beta = weighted_cox(treat, times, events, weights)
        h = 1e-5
        up = cox_loglik(beta + h, treat, times, events, weights)
        at = cox_loglik(beta, treat, times, events, weights)
        dn = cox_loglik(beta - h, treat, times, events, weights)
        assert (up - dn) / (2 * h) == pytest.approx(0.0, abs=1e-6)
        assert up + dn - 2 * at < 0  # maximum, not saddle
