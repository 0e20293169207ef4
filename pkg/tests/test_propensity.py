import numpy as np
import pytest

from eca.errors import ConfigError, SeparationError
from eca.plan import CovariateSpec
from eca.propensity import (
    CovariateEncoder,
    build_design,
    cluster_sandwich,
    fit_design,
    fit_logistic,
    predict_ps,
    _bernoulli_loglik,
    _sigmoid,
)

from conftest import binary_covariate_cohort, make_cohort, make_line, simple_plan


def two_by_two_design():
    # y=1: x=1 count 3, x=0 count 1; y=0: x=1 count 1, x=0 count 3
    X = np.array([[1, 1]] * 3 + [[1, 0]] + [[1, 1]] + [[1, 0]] * 3, dtype=float)
    y = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=float)
    return X, y


def test_intercept_only_equal_groups():
    X = np.ones((20, 1))
    y = np.array([1.0] * 10 + [0.0] * 10)
    fit = fit_logistic(X, y, np.arange(20))
    assert fit.intercept == pytest.approx(0.0, abs=1e-10)


def test_two_by_two_closed_form():
    X, y = two_by_two_design()
    fit = fit_logistic(X, y, np.arange(8))
    assert fit.intercept == pytest.approx(-np.log(3), abs=1e-8)
    assert fit.coefficients[0] == pytest.approx(np.log(9), abs=1e-8)
    assert fit.converged


def test_gradient_small_at_solution():
    X, y = two_by_two_design()
    fit = fit_logistic(X, y, np.arange(8))
    p = _sigmoid(X @ fit.beta)
    assert np.max(np.abs(X.T @ (y - p))) < 1e-6


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    X = np.column_stack([np.ones(30), rng.normal(size=30)])
    y = (rng.random(30) < 0.4).astype(float)
    fit = fit_logistic(X, y, np.arange(30))
    beta = fit.beta
    h = 1e-6
    for j in range(2):
        up, dn = beta.copy(), beta.copy()
        up[j] += h
        dn[j] -= h
        fd = (
            _bernoulli_loglik(y, _sigmoid(X @ up))
            - _bernoulli_loglik(y, _sigmoid(X @ dn))
        ) / (2 * h)
        analytic = float((X.T @ (y - _sigmoid(X @ beta)))[j])
        assert fd == pytest.approx(analytic, abs=1e-4 * (abs(analytic) + 1))


def test_perfect_separation_detected():
    X = np.column_stack([np.ones(10), np.r_[np.ones(5), np.zeros(5)]])
    y = np.r_[np.ones(5), np.zeros(5)]
    with pytest.raises(SeparationError) as exc:
        fit_logistic(X, y, np.arange(10), column_names=["sep"])
    assert "sep" in exc.value.covariates


def test_mean_prediction_equals_sample_proportion():
    rng = np.random.default_rng(11)
    X = np.column_stack([np.ones(50), rng.normal(size=50), rng.integers(0, 2, 50)])
    y = (rng.random(50) < 0.35).astype(float)
    fit = fit_logistic(X, y, np.arange(50))
    p = _sigmoid(X @ fit.beta)
    assert p.mean() == pytest.approx(y.mean(), abs=1e-8)


def sandwich_oracle(X, y, p, clusters):
    """Literal B^-1 M B^-1 assembly with explicit loops."""
    k = X.shape[1]
    B = np.zeros((k, k))
    for i in range(X.shape[0]):
        B += p[i] * (1 - p[i]) * np.outer(X[i], X[i])
    M = np.zeros((k, k))
    for cid in set(clusters):
        u = np.zeros(k)
        for i in range(X.shape[0]):
            if clusters[i] == cid:
                u += X[i] * (y[i] - p[i])
        M += np.outer(u, u)
    Binv = np.linalg.inv(B)
    return Binv @ M @ Binv


def test_sandwich_matches_oracle_six_rows_three_clusters():
    rng = np.random.default_rng(3)
    X = np.column_stack([np.ones(6), rng.normal(size=6)])
    y = np.array([1, 0, 1, 1, 0, 0], dtype=float)
    clusters = np.array(["a", "a", "b", "b", "c", "c"], dtype=object)
    fit = fit_logistic(X, y, clusters)
    p = _sigmoid(X @ fit.beta)
    expected = sandwich_oracle(X, y, p, list(clusters))
    assert np.max(np.abs(fit.sandwich_covariance - expected)) < 1e-10


def test_sandwich_matches_oracle_random_cluster_structures():
    rng = np.random.default_rng(17)
    for _ in range(5):
        n = int(rng.integers(4, 11))
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = rng.integers(0, 2, n).astype(float)
        if y.min() == y.max():
            continue
        clusters = rng.integers(0, 3, n)
        p = _sigmoid(X @ rng.normal(size=2))
        ours = cluster_sandwich(X, y, p, clusters.astype(object))
        expected = sandwich_oracle(X, y, p, list(clusters))
        assert np.max(np.abs(ours - expected)) < 1e-10


def grid_search_mle(X, y, lo=-8.0, hi=8.0, passes=4, points=201):
    """2-parameter grid-refinement maximizer of the Bernoulli log-likelihood."""
    mu_lo, mu_hi, b_lo, b_hi = lo, hi, lo, hi
    best = (0.0, 0.0)
    for _ in range(passes):
        mus = np.linspace(mu_lo, mu_hi, points)
        bs = np.linspace(b_lo, b_hi, points)
        eta = mus[:, None, None] + bs[None, :, None] * X[None, None, :, 1]
        p = 1.0 / (1.0 + np.exp(-eta))
        ll = np.sum(y * np.log(p + 1e-300) + (1 - y) * np.log(1 - p + 1e-300), axis=2)
        i, j = np.unravel_index(np.argmax(ll), ll.shape)
        best = (mus[i], bs[j])
        dm = (mu_hi - mu_lo) / (points - 1)
        db = (b_hi - b_lo) / (points - 1)
        mu_lo, mu_hi = best[0] - 2 * dm, best[0] + 2 * dm
        b_lo, b_hi = best[1] - 2 * db, best[1] + 2 * db
    return best


def test_irls_matches_grid_search_on_random_instances():
    rng = np.random.default_rng(99)
    checked = 0
    while checked < 10:
        n = int(rng.integers(8, 16))
        x = rng.normal(size=n)
        y = (rng.random(n) < 1 / (1 + np.exp(-(0.3 + 0.8 * x)))).astype(float)
        if y.min() == y.max():
            continue
        X = np.column_stack([np.ones(n), x])
        try:
            fit = fit_logistic(X, y, np.arange(n))
        except SeparationError:
            continue
        mu, beta = grid_search_mle(X, y)
        assert fit.intercept == pytest.approx(mu, abs=1e-6)
        assert fit.coefficients[0] == pytest.approx(beta, abs=1e-6)
        checked += 1


def design_cohort():
    return make_cohort(
        [[make_line("T1", covariates={"x": 1})],
         [make_line("T2", covariates={"x": 0})]],
        [[make_line("R1", 1, covariates={"x": 1}),
          make_line("R1", 2, covariates={"x": 0}),
          make_line("R1", 3, covariates={"x": 1})]],
        ["x"],
    )


def test_design_row_count_and_clusters():
    design = build_design(design_cohort(), simple_plan())
    assert design.X.shape == (5, 2)
    assert list(design.y) == [1, 1, 0, 0, 0]
    assert list(design.clusters) == ["T1", "T2", "R1", "R1", "R1"]


def test_categorical_encoding_against_reference():
    rows = [{"stage": "Stage I"}, {"stage": "Stage II"}, {"stage": "Stage III"}]
    enc = CovariateEncoder.fit(
        [CovariateSpec("stage", "categorical", reference="Stage I")], rows
    )
    assert enc.column_names == ["stage=Stage II", "stage=Stage III"]
    assert list(enc.encode_row({"stage": "Stage I"})) == [0.0, 0.0]
    assert list(enc.encode_row({"stage": "Stage III"})) == [0.0, 1.0]


def test_constant_column_error_names_covariate():
    rows = [{"gender": "M"}, {"gender": "M"}]
    with pytest.raises(ConfigError, match="gender"):
        CovariateEncoder.fit(
            [CovariateSpec("gender", "categorical", reference="F")], rows
        )


def test_unseen_category_at_prediction():
    cohort = binary_covariate_cohort(
        {("T", 1): 3, ("T", 0): 1, ("R", 1): 1, ("R", 0): 3}
    )
    plan = simple_plan(
        covariates=(CovariateSpec("x", "categorical", reference="0"),)
    )
    fit = fit_design(build_design(cohort, plan))
    with pytest.raises(ConfigError, match="unseen"):
        predict_ps(fit, {"x": "7"})


def test_predict_ps_examples_from_two_by_two():
    cohort = binary_covariate_cohort(
        {("T", 1): 3, ("T", 0): 1, ("R", 1): 1, ("R", 0): 3}
    )
    fit = fit_design(build_design(cohort, simple_plan()))
    assert predict_ps(fit, {"x": 1}) == pytest.approx(0.75, abs=1e-8)
    assert predict_ps(fit, {"x": 0}) == pytest.approx(0.25, abs=1e-8)


def test_standardization_invariance_under_rescaling():
    rng = np.random.default_rng(4)
    ages = rng.normal(60, 10, size=12).round(2)
    trial_rows = [
        [make_line(f"T{i}", covariates={"age": ages[i]})] for i in range(6)
    ]
    rw_rows = [
        [make_line(f"R{i}", covariates={"age": ages[6 + i]})] for i in range(6)
    ]
    cohort = make_cohort(trial_rows, rw_rows, ["age"])
    plan = simple_plan(covariates=(CovariateSpec("age", "numeric"),))
    fit = fit_design(build_design(cohort, plan))

    scaled = make_cohort(
        [[make_line(f"T{i}", covariates={"age": ages[i] * 12})] for i in range(6)],
        [[make_line(f"R{i}", covariates={"age": ages[6 + i] * 12})] for i in range(6)],
        ["age"],
    )
    fit_scaled = fit_design(build_design(scaled, plan))
    for i in range(12):
        a = ages[i]
        assert predict_ps(fit, {"age": a}) == pytest.approx(
            predict_ps(fit_scaled, {"age": a * 12}), abs=1e-10
        )
