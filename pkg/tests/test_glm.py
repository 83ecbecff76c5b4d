import numpy as np
import pytest
import scipy.linalg

from heatwarn.glm import (
    GAUSSIAN,
    QUASIPOISSON,
    SingularDesignError,
    fit_glm,
    predict,
)


def test_intercept_only_poisson_is_log_mean():
    fit = fit_glm(np.ones((3, 1)), [1, 2, 3], QUASIPOISSON)
    assert fit.converged
    assert fit.coefficients[0] == pytest.approx(np.log(2.0), abs=1e-10)


def test_gaussian_exact_interpolation():
    x = np.arange(1.0, 9.0)
    design = np.column_stack([np.ones_like(x), x])
    fit = fit_glm(design, 2.0 * x, GAUSSIAN)
    np.testing.assert_allclose(fit.coefficients, [0.0, 2.0], atol=1e-10)
    assert fit.deviance == pytest.approx(0.0, abs=1e-18)
    assert fit.dispersion >= 1e-8  # floored on perfect fits


def test_poisson_monte_carlo_consistency():
    # y ~ Poisson(exp(0.5 + 0.3 x)), n = 10000: estimates within 3 SEs
    # of the truth in at least 95% of seeds.
    hits = 0
    seeds = 50
    for seed in range(seeds):
        rng = np.random.default_rng(1000 + seed)
        x = rng.normal(size=10000)
        y = rng.poisson(np.exp(0.5 + 0.3 * x))
        design = np.column_stack([np.ones_like(x), x])
        fit = fit_glm(design, y, QUASIPOISSON)
        se = fit.se()
        ok = (
            abs(fit.coefficients[0] - 0.5) <= 3 * se[0]
            and abs(fit.coefficients[1] - 0.3) <= 3 * se[1]
        )
        hits += ok
    assert hits >= 0.95 * seeds


def test_gaussian_matches_normal_equations():
    # Independent oracle: explicit Gram solve on random full-rank problems.
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = rng.integers(20, 60)
        k = rng.integers(1, 6)
        design = rng.normal(size=(n, k))
        y = rng.normal(size=n)
        fit = fit_glm(design, y, GAUSSIAN)
        oracle = scipy.linalg.solve(design.T @ design, design.T @ y, assume_a="pos")
        np.testing.assert_allclose(fit.coefficients, oracle, atol=1e-8, rtol=1e-8)


def test_score_columns_sum_to_zero_at_optimum():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = 200
        x = rng.normal(size=n)
        design = np.column_stack([np.ones(n), x])
        y = rng.poisson(np.exp(0.2 + 0.4 * x))
        fit = fit_glm(design, y, QUASIPOISSON)
        assert np.all(np.abs(fit.scores.sum(axis=0)) < 1e-6 * n)


def test_dispersion_only_rescales_covariance():
    rng = np.random.default_rng(11)
    x = rng.normal(size=500)
    y = rng.poisson(np.exp(0.1 + 0.5 * x))
    design = np.column_stack([np.ones_like(x), x])
    free = fit_glm(design, y, QUASIPOISSON)
    fixed = fit_glm(design, y, QUASIPOISSON, dispersion=1.0)
    np.testing.assert_allclose(free.coefficients, fixed.coefficients, atol=1e-12)
    np.testing.assert_allclose(free.cov, free.dispersion * fixed.cov, rtol=1e-8)


def test_covariance_symmetric_psd():
    rng = np.random.default_rng(5)
    for _ in range(20):
        design = np.column_stack([np.ones(100), rng.normal(size=(100, 2))])
        y = rng.poisson(2.0, size=100)
        fit = fit_glm(design, y, QUASIPOISSON)
        np.testing.assert_allclose(fit.cov, fit.cov.T, atol=1e-12)
        assert np.min(scipy.linalg.eigvalsh(fit.cov)) > -1e-10


def test_singular_design_raises():
    x = np.arange(10.0)
    design = np.column_stack([np.ones(10), x, 2.0 * x])
    with pytest.raises(SingularDesignError):
        fit_glm(design, np.ones(10), GAUSSIAN)


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        fit_glm(np.ones((4, 1)), [1, -2, 1, 1], QUASIPOISSON)


def test_predict_identity_link_values():
    fit = fit_glm(np.ones((5, 1)), np.arange(5.0), GAUSSIAN)
    x = np.arange(1.0, 9.0)
    gfit = fit_glm(np.column_stack([np.ones_like(x), x]), 2.0 * x, GAUSSIAN)
    assert predict(gfit, np.array([1.0, 3.0]))[0] == pytest.approx(6.0, abs=1e-10)
    assert fit is not None


def test_predict_zero_coefficients_is_one_for_log_link():
    rng = np.random.default_rng(2)
    y = rng.poisson(1.0, size=50)
    fit = fit_glm(np.ones((50, 1)), y, QUASIPOISSON)
    fit.coefficients[:] = 0.0
    assert predict(fit, np.array([[1.0]]))[0] == pytest.approx(1.0)


def test_predict_matches_training_fitted_values():
    rng = np.random.default_rng(9)
    x = rng.normal(size=300)
    design = np.column_stack([np.ones_like(x), x])
    y = rng.poisson(np.exp(0.3 + 0.2 * x))
    fit = fit_glm(design, y, QUASIPOISSON)
    np.testing.assert_allclose(predict(fit, design), fit.fitted, atol=1e-10)


def test_predict_dimension_mismatch():
    fit = fit_glm(np.ones((5, 1)), np.arange(5.0), GAUSSIAN)
    with pytest.raises(ValueError):
        predict(fit, np.ones((2, 3)))


def test_nonconvergence_flag():
    rng = np.random.default_rng(13)
    x = rng.normal(size=100)
    y = rng.poisson(np.exp(0.5 * x))
    design = np.column_stack([np.ones_like(x), x])
    fit = fit_glm(design, y, QUASIPOISSON, max_iter=1)
    assert not fit.converged
