import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eca.plan import CovariateSpec
from eca.propensity import build_design, fit_design
from eca.weighting import (
    build_weighted_sample,
    effective_sample_size,
    odds_weight,
    select_line,
    smd,
)

from conftest import binary_covariate_cohort, make_cohort, make_line, simple_plan


class TestSelectLine:
    def test_argmax(self):
        assert select_line({1: 0.2, 2: 0.7, 3: 0.4}) == 2

    def test_tie_goes_to_earliest(self):
        assert select_line({1: 0.5, 2: 0.5}) == 1

    def test_singleton(self):
        assert select_line({4: 0.3}) == 4

    @given(
        st.dictionaries(
            st.integers(1, 9), st.floats(0.01, 0.99), min_size=1, max_size=6
        )
    )
    def test_invariant_under_increasing_transform(self, ps_map):
        transformed = {ln: math.atan(3 * e) + 2 for ln, e in ps_map.items()}
        assert select_line(ps_map) == select_line(transformed)


class TestOddsWeight:
    @pytest.mark.parametrize("e,w", [(0.5, 1.0), (0.8, 4.0), (0.9, 9.0)])
    def test_examples(self, e, w):
        assert odds_weight(e) == pytest.approx(w)

    @pytest.mark.parametrize("e", [0.0, 1.0, -0.2, 1.5])
    def test_domain(self, e):
        with pytest.raises(ValueError):
            odds_weight(e)


class TestEss:
    @pytest.mark.parametrize(
        "w,expected", [([1, 1, 1, 1], 4.0), ([2, 2], 2.0), ([3, 1], 1.6)]
    )
    def test_examples(self, w, expected):
        assert effective_sample_size(w) == pytest.approx(expected)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            effective_sample_size([])

    @given(st.lists(st.floats(0.01, 50), min_size=1, max_size=30))
    def test_bounded_by_count(self, w):
        ess = effective_sample_size(w)
        assert ess <= len(w) + 1e-9
        if len(set(w)) == 1:
            assert ess == pytest.approx(len(w))


class TestSmd:
    def test_unit_difference(self):
        rng = np.random.default_rng(0)
        a = rng.normal(1, 1, 4000)
        b = rng.normal(0, 1, 4000)
        assert smd(a, b) == pytest.approx(1.0, abs=0.08)

    def test_identical_distributions(self):
        vals = [1.0, 2.0, 3.0, 4.0]
        assert smd(vals, vals) == pytest.approx(0.0)

    def test_binary_same_prevalence(self):
        assert smd([0, 1, 0, 1], [1, 0, 1, 0]) == pytest.approx(0.0)

    def test_zero_pooled_sd_flagged_nan(self):
        assert math.isnan(smd([1, 1], [0, 0]))

    def test_weights_shift_rw_mean(self):
        # weighting moves the RW mean toward the upweighted values
        value = smd([1.0, 1.0, 0.0], [1.0, 0.0], rw_weights=[3.0, 1.0])
        unweighted = smd([1.0, 1.0, 0.0], [1.0, 0.0])
        assert value != unweighted


def confounded_cohort(n=120, shift=1.5, seed=2):
    rng = np.random.default_rng(seed)
    trial_rows, rw_rows = [], []
    for i in range(n):
        x = round(float(rng.normal(0.0, 1.0)), 4)
        trial_rows.append(
            [make_line(f"T{i}", covariates={"x": x}, death_months=None)]
        )
    for i in range(n):
        x = round(float(rng.normal(shift, 1.0)), 4)
        rw_rows.append(
            [make_line(f"R{i}", covariates={"x": x}, death_months=None)]
        )
    return make_cohort(trial_rows, rw_rows, ["x"])


def run_weighting(cohort, plan):
    design = build_design(cohort, plan)
    fit1 = fit_design(design)
    return build_weighted_sample(cohort, fit1, design, plan)


def test_single_line_selection_is_identity():
    cohort = binary_covariate_cohort(
        {("T", 1): 4, ("T", 0): 2, ("R", 1): 2, ("R", 0): 4}
    )
    sample, _, _ = run_weighting(cohort, simple_plan())
    assert list(sample.line_numbers) == [1] * len(sample)
    assert len(sample) == 12


def test_planted_imbalance_reduced_below_threshold():
    plan = simple_plan(covariates=(CovariateSpec("x", "numeric"),))
    sample, balance, _ = run_weighting(confounded_cohort(), plan)
    row = balance[0]
    assert row.smd_pre > 0.25
    assert row.smd_post < 0.25
    # independent recomputation of the post-weight SMD
    x = np.array([float(r["x"]) for r in sample.covariate_rows])
    trial = sample.arms == 1
    direct = smd(x[trial], x[~trial], sample.weights[~trial])
    assert row.smd_post == pytest.approx(direct, abs=1e-12)


def test_weight_sum_and_ess_reported():
    plan = simple_plan(covariates=(CovariateSpec("x", "numeric"),))
    sample, _, _ = run_weighting(confounded_cohort(), plan)
    assert sample.rw_weight_sum() > 0
    assert sample.rw_ess() <= (sample.arms == 0).sum()


def test_exact_balance_saturated_binary_model():
    cohort = binary_covariate_cohort(
        {("T", 1): 6, ("T", 0): 4, ("R", 1): 3, ("R", 0): 9}
    )
    sample, _, _ = run_weighting(cohort, simple_plan())
    x = np.array([float(r["x"]) for r in sample.covariate_rows])
    trial = sample.arms == 1
    w = sample.weights[~trial]
    weighted_rw_mean = float(w @ x[~trial] / w.sum())
    assert weighted_rw_mean == pytest.approx(x[trial].mean(), abs=1e-8)


def test_sample_has_one_row_per_patient():
    cohort = make_cohort(
        [[make_line("T1", covariates={"x": 1})],
         [make_line("T2", covariates={"x": 0})]],
        [[make_line("R1", 1, covariates={"x": 1}),
          make_line("R1", 2, covariates={"x": 0})],
         [make_line("R2", covariates={"x": 0})]],
        ["x"],
    )
    sample, _, _ = run_weighting(cohort, simple_plan())
    assert len(sample) == 4
    assert sorted(sample.patient_ids) == ["R1", "R2", "T1", "T2"]
    assert np.all(sample.weights[sample.arms == 1] == 1.0)
    assert np.all(sample.weights > 0)


def test_selection_picks_highest_stage1_score():
    # trial is all x=1, so an external line with x=1 scores higher
    cohort = make_cohort(
        [[make_line("T1", covariates={"x": 1})],
         [make_line("T2", covariates={"x": 1})],
         [make_line("T3", covariates={"x": 0})]],
        [[make_line("R1", 1, covariates={"x": 0}),
          make_line("R1", 2, covariates={"x": 1})],
         [make_line("R2", covariates={"x": 0})],
         [make_line("R3", covariates={"x": 1})]],
        ["x"],
    )
    sample, _, _ = run_weighting(cohort, simple_plan())
    selected = dict(zip(sample.patient_ids, sample.line_numbers))
    assert selected["R1"] == 2
