import dataclasses
import math

import numpy as np
import pytest

from betta import ModelError
from betta.design import DesignMatrix, read_covariates
from betta.estimators import RichnessEstimate
from betta.inference import (
    _grid_search,
    blup,
    fit,
    global_test,
    interval_plot_data,
    loglik,
    marginal_test,
    q_test,
    reml_loglik,
)
from oracles import grid_reml, reml_value

# frozen from oracles.grid_reml (agrees with the closed form sum(r^2)/(m-1) - se^2)
M5_Y = np.array([80.0, 95.0, 100.0, 105.0, 140.0])
M5_SE = np.full(5, 5.0)
M5_BETA0 = 104.0
M5_SIGMA2U = 467.5


def _est(ids, y, se):
    return [RichnessEstimate(i, float(a), float(b)) for i, a, b in zip(ids, y, se)]


def test_reml_single_sample_is_zero():
    X = np.ones((1, 1))
    assert reml_loglik([250.0], 0.0, ([250.0], [7.0]), X) == pytest.approx(0.0, abs=1e-14)


def test_reml_maximised_by_gls_beta():
    rng = np.random.default_rng(4)
    X = np.column_stack([np.ones(6), rng.normal(size=6)])
    y, se = rng.normal(100, 10, 6), rng.uniform(2, 6, 6)
    for s2u in (0.0, 3.0, 50.0):
        _, b_gls = reml_value(s2u, y, se, X)
        top = reml_loglik(b_gls, s2u, (y, se), X)
        for delta in ([1e-3, 0], [0, -1e-3], [0.5, 0.5]):
            assert reml_loglik(b_gls + np.array(delta), s2u, (y, se), X) < top


def test_reml_is_loglik_minus_logdet():
    rng = np.random.default_rng(5)
    X = np.column_stack([np.ones(7), rng.normal(size=7), rng.normal(size=7)])
    y, se = rng.normal(50, 5, 7), rng.uniform(1, 3, 7)
    beta, s2u = np.array([50.0, 1.0, -2.0]), 4.0
    tot = se**2 + s2u
    logdet = math.log(np.linalg.det((X / tot[:, None]).T @ X))
    assert reml_loglik(beta, s2u, (y, se), X) == pytest.approx(
        loglik(beta, s2u, (y, se), X) - 0.5 * logdet, rel=1e-13
    )


def test_loglik_equal_se_zero_residual():
    m, s = 6, 3.0
    assert loglik([10.0], 0.0, (np.full(m, 10.0), np.full(m, s)), np.ones((m, 1))) == pytest.approx(
        -(m / 2) * math.log(s * s), rel=1e-14
    )


def test_loglik_permutation_invariant():
    rng = np.random.default_rng(6)
    X = np.column_stack([np.ones(5), rng.normal(size=5)])
    y, se = rng.normal(20, 3, 5), rng.uniform(1, 2, 5)
    perm = rng.permutation(5)
    a = loglik([20.0, 1.0], 2.0, (y, se), X)
    b = loglik([20.0, 1.0], 2.0, (y[perm], se[perm]), X[perm])
    assert a == pytest.approx(b, rel=1e-14)


def test_negative_sigma2u_rejected():
    with pytest.raises(ValueError):
        reml_loglik([1.0], -1e-3, ([1.0, 2.0], [1.0, 1.0]), np.ones((2, 1)))
    with pytest.raises(ValueError):
        loglik([1.0], -1.0, ([1.0, 2.0], [1.0, 1.0]), np.ones((2, 1)))


def test_fit_homogeneous():
    ids = ["a", "b", "c"]
    f = fit(_est(ids, [100, 100, 100], [10, 10, 10]), DesignMatrix.intercept_only(ids))
    assert f.beta[0] == pytest.approx(100.0, abs=1e-12)
    assert f.sigma2_u == 0.0
    np.testing.assert_allclose(f.residuals, 0.0, atol=1e-12)
    assert f.converged


def test_fit_equal_se_gives_mean():
    y = np.array([12.0, 40.0, 33.0, 7.0, 90.0])
    f = fit((y, np.full(5, 4.0)), np.ones((5, 1)))
    assert f.beta[0] == pytest.approx(y.mean(), rel=1e-12)


def test_fit_matches_frozen_oracle():
    f = fit((M5_Y, M5_SE), np.ones((5, 1)))
    assert f.beta[0] == pytest.approx(M5_BETA0, rel=1e-4)
    assert f.sigma2_u == pytest.approx(M5_SIGMA2U, rel=1e-4)


def test_fit_matches_live_oracle_with_covariate():
    rng = np.random.default_rng(8)
    x = np.linspace(0, 1, 7)
    X = np.column_stack([np.ones(7), x])
    se = rng.uniform(5, 15, 7)
    y = 200 - 60 * x + rng.normal(0, 20, 7) + rng.normal(0, se)
    s2u, beta, value = grid_reml(y, se, X)
    f = fit((y, se), X)
    assert abs(f.reml_loglik - value) <= 1e-6 * abs(value)
    assert f.sigma2_u == pytest.approx(s2u, rel=1e-4, abs=1e-6)
    np.testing.assert_allclose(f.beta, beta, rtol=1e-4)


def test_fit_cov_is_inverse_weighted_information():
    rng = np.random.default_rng(3)
    X = np.column_stack([np.ones(8), rng.normal(size=8)])
    y, se = rng.normal(100, 20, 8), rng.uniform(3, 9, 8)
    f = fit((y, se), X)
    W = np.diag(1 / (se**2 + f.sigma2_u))
    np.testing.assert_allclose(f.cov_beta, np.linalg.inv(X.T @ W @ X), rtol=1e-10)
    np.testing.assert_allclose(f.weights, np.diag(W), rtol=1e-14)
    assert np.all(np.linalg.eigvalsh(f.cov_beta) > 0)


def test_fit_aligns_by_sample_id():
    design, _ = read_covariates("sample_id,x\nb,1\na,0\nc,2\nd,5\n")
    est = _est(["a", "b", "c", "d"], [10, 13, 17, 24], [1, 1, 1, 1])
    f = fit(est, design)
    assert f.sample_ids == ("a", "b", "c", "d")
    np.testing.assert_array_equal(f.design.values[:, 1], [0, 1, 2, 5])


def test_fit_errors():
    with pytest.raises(ModelError):
        DesignMatrix(np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]), ("i", "x"))
    design, _ = read_covariates("sample_id,x\na,0\nb,1\nc,2\n")
    with pytest.raises(ModelError, match="missing"):
        fit(_est(["a", "b", "z"], [1, 2, 3], [1, 1, 1]), design)
    with pytest.raises(ModelError):
        fit((np.array([1.0, 2.0]), np.ones(2)), np.column_stack([np.ones(2), [0.0, 1.0]]))


def test_fit_nonconvergence_warns():
    with pytest.warns(RuntimeWarning, match="did not converge"):
        f = fit((M5_Y, np.array([5.0, 9.0, 2.0, 7.0, 4.0])), np.ones((5, 1)), max_iter=1)
    assert not f.converged


def test_grid_search_matches_oracle():
    y = np.array([80.0, 95.0, 100.0, 105.0, 140.0])
    se = np.array([5.0, 9.0, 2.0, 7.0, 4.0])
    X = np.ones((5, 1))
    s2u, _, _ = grid_reml(y, se, X)
    assert _grid_search(y, se**2, X) == pytest.approx(s2u, rel=1e-4)


def _symmetric_fit():
    X = np.column_stack([np.ones(4), [-1.0, 1.0, -1.0, 1.0]])
    return fit((np.array([10.0, 10.0, 12.0, 12.0]), np.ones(4)), X)


def test_marginal_null_point():
    t = marginal_test(_symmetric_fit(), 1)
    assert t.statistic == pytest.approx(0.0, abs=1e-12)
    assert t.p_value == pytest.approx(1.0, abs=1e-12)
    assert t.df is None and t.kind == "marginal_wald"


def test_marginal_column_rescaling():
    rng = np.random.default_rng(12)
    x = rng.normal(size=9)
    y, se = 50 + 8 * x + rng.normal(0, 3, 9), rng.uniform(1, 2, 9)
    a = fit((y, se), np.column_stack([np.ones(9), x]), tol=1e-13)
    b = fit((y, se), np.column_stack([np.ones(9), 2 * x]), tol=1e-13)
    assert b.beta[1] == pytest.approx(a.beta[1] / 2, rel=1e-10)
    assert b.se_beta[1] == pytest.approx(a.se_beta[1] / 2, rel=1e-10)
    assert marginal_test(b, 1).p_value == pytest.approx(marginal_test(a, 1).p_value, rel=1e-10)


def test_global_null_point():
    t = global_test(_symmetric_fit())
    assert t.statistic == pytest.approx(0.0, abs=1e-20)
    assert t.p_value == 1.0 and t.df == 1


def test_global_requires_covariates():
    with pytest.raises(ModelError, match="no non-intercept"):
        global_test(fit((M5_Y, M5_SE), np.ones((5, 1))))


def test_global_column_permutation():
    rng = np.random.default_rng(21)
    x1, x2 = rng.normal(size=10), rng.normal(size=10)
    y, se = 30 + 2 * x1 - 3 * x2 + rng.normal(0, 2, 10), rng.uniform(1, 2, 10)
    a = fit((y, se), np.column_stack([np.ones(10), x1, x2]), tol=1e-13)
    b = fit((y, se), np.column_stack([np.ones(10), x2, x1]), tol=1e-13)
    assert global_test(a).statistic == pytest.approx(global_test(b).statistic, rel=1e-10)


def test_global_equals_z_squared_for_centred_covariate():
    rng = np.random.default_rng(2)
    x = rng.normal(size=8)
    x -= x.mean()  # equal se => equal weights, so this is weight-centred
    y = 100 + 5 * x + rng.normal(0, 6, 8)
    f = fit((y, np.full(8, 3.0)), np.column_stack([np.ones(8), x]))
    assert np.sum(f.weights * x) == pytest.approx(0.0, abs=1e-12)
    z = marginal_test(f, 1).statistic
    assert global_test(f).statistic == pytest.approx(z * z, rel=1e-10)


def test_q_perfect_fit():
    ids = ["a", "b", "c"]
    f = fit(_est(ids, [100, 100, 100], [10, 10, 10]), DesignMatrix.intercept_only(ids))
    t = q_test(f)
    assert t.statistic == pytest.approx(0.0, abs=1e-20)
    assert (t.df, t.p_value) == (2, 1.0)


def test_q_hand_value():
    f = fit((np.array([90.0, 110.0]), np.array([10.0, 10.0])), np.ones((2, 1)))
    assert f.beta[0] == pytest.approx(100.0, rel=1e-12)
    t = q_test(f)
    assert t.statistic == pytest.approx(2.0, rel=1e-12)
    assert t.df == 1
    assert t.p_value == pytest.approx(0.15729920705028513, abs=1e-10)  # mpmath quadrature


def test_q_needs_degrees_of_freedom():
    f = fit((np.array([1.0, 3.0, 4.0]), np.ones(3)), np.ones((3, 1)))
    X = np.column_stack([np.ones(3), [0.0, 1.0, 5.0], [0.0, 1.0, 25.0]])
    short = dataclasses.replace(f, design=DesignMatrix(X, ("i", "x", "x2")))
    with pytest.raises(ModelError, match="m - p - 1"):
        q_test(short)


def test_q_joint_scale_invariance():
    y, se = np.array([80.0, 95.0, 101.0, 120.0]), np.array([5.0, 8.0, 3.0, 6.0])
    a = q_test(fit((y, se), np.ones((4, 1)), tol=1e-13)).statistic
    b = q_test(fit((7 * y, 7 * se), np.ones((4, 1)), tol=1e-13)).statistic
    assert b == pytest.approx(a, rel=1e-10)


def test_blup_no_heterogeneity():
    ids = ["a", "b", "c", "d"]
    f = fit(_est(ids, [98, 101, 100, 102], [10, 10, 10, 10]), DesignMatrix.intercept_only(ids))
    assert f.sigma2_u == 0.0
    b = blup(f)
    np.testing.assert_array_equal(b.u_star, 0.0)
    np.testing.assert_allclose(b.c_star, f.fitted)
    assert "underestimate" in b.caveat


def test_blup_midpoint_when_variances_equal():
    d = math.sqrt(50.0)
    f = fit((np.array([100 - d, 100.0, 100 + d]), np.full(3, 5.0)), np.ones((3, 1)), tol=1e-14)
    assert f.sigma2_u == pytest.approx(25.0, rel=1e-9)
    np.testing.assert_allclose(blup(f).u_star, f.residuals / 2, rtol=1e-9, atol=1e-12)


def test_blup_against_oracle_fit():
    f = fit((M5_Y, M5_SE), np.ones((5, 1)))
    k = M5_SIGMA2U / (M5_SIGMA2U + 25.0)
    expected = M5_BETA0 + k * (M5_Y - M5_BETA0)
    np.testing.assert_allclose(blup(f).c_star, expected, rtol=1e-6)


def test_blup_variance_limits():
    f = fit((M5_Y, M5_SE), np.ones((5, 1)))
    b = blup(f)
    k = f.sigma2_u / (f.sigma2_u + 25.0)
    np.testing.assert_allclose(b.var_c_star, 25.0 * k + (1 - k) ** 2 * f.cov_beta[0, 0], rtol=1e-12)
    assert np.all(b.var_c_star < 25.0)


def test_interval_rows():
    (row,) = interval_plot_data([RichnessEstimate("A", 1000.0, 50.0)])
    assert (row.lower, row.center, row.upper, row.flagged) == (900.0, 1000.0, 1100.0, False)
    same = interval_plot_data([RichnessEstimate(str(i), 500.0, 20.0) for i in range(4)])
    assert not any(r.flagged for r in same)
    mixed = [RichnessEstimate(str(i), 500.0, 100.0) for i in range(5)] + [RichnessEstimate("t", 480.0, 1.0)]
    flags = {r.sample_id: r.flagged for r in interval_plot_data(mixed)}
    assert flags == {"0": False, "1": False, "2": False, "3": False, "4": False, "t": True}


def test_categorical_treatment_coding():
    text = "sample_id,treatment,patient\ns1,PRE,A\ns2,TR,A\ns3,POST,A\ns4,PRE,B\ns5,TR,B\ns6,POST,B\n"
    design, levels = read_covariates(text)
    assert levels == {"treatment": ["POST", "PRE", "TR"], "patient": ["A", "B"]}
    assert design.column_names == ("(Intercept)", "treatment[PRE]", "treatment[TR]", "patient[B]")
    np.testing.assert_array_equal(design.values[:, 1], [1, 0, 0, 1, 0, 0])
