"""Random-effects regression of richness estimates on covariates.

The model for ``m`` samples is

    c_hat_i = x_i' beta + u_i + e_i,   u_i ~ N(0, s2_u),   e_i ~ N(0, se_i**2)

with the estimated standard errors ``se_i`` plugged in for the true sampling
deviations. ``beta`` and ``s2_u`` are fitted by restricted maximum likelihood
using alternating weighted-least-squares / scoring updates.

BLUP prediction variance
------------------------
With shrinkage factor ``k_i = s2_u / (s2_u + se_i**2)`` the prediction
``c*_i = x_i' beta + k_i r_i`` has prediction-error variance

    se_i**2 * k_i + (1 - k_i)**2 * x_i' Cov(beta) x_i

(the usual mixed-model identity holding variance components fixed). It ignores
the uncertainty in ``s2_u`` and in the ``se_i`` and so may understate the true
sampling variability when the design is unbalanced and there are no
replicates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from betta.design import DesignMatrix
from betta.errors import ModelError
from betta.estimators import RichnessEstimate
from betta.tails import chi2_sf, normal_two_sided

BLUP_VARIANCE_CAVEAT = (
    "Prediction variances hold the variance components fixed; they may "
    "underestimate the true sampling variability when the design is "
    "unbalanced and no replicates are available."
)


def _unpack(estimates):
    """(c_hat, variance, ids) from RichnessEstimates or a ``(c_hat, se)`` pair."""
    if isinstance(estimates, tuple) and len(estimates) == 2 and not isinstance(
        estimates[0], RichnessEstimate
    ):
        y = np.asarray(estimates[0], dtype=float)
        se = np.asarray(estimates[1], dtype=float)
        ids = None
    else:
        y = np.array([e.c_hat for e in estimates], dtype=float)
        se = np.array([e.se for e in estimates], dtype=float)
        ids = tuple(e.sample_id for e in estimates)
    if y.shape != se.shape or y.ndim != 1:
        raise ModelError("c_hat and se must be 1-d arrays of equal length")
    if not np.all(se > 0):
        raise ModelError("all standard errors must be > 0")
    return y, se * se, ids


def _design_array(X):
    return X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)


def _normal_matrices(X, w):
    A = (X * w[:, None]).T @ X
    B = (X * (w * w)[:, None]).T @ X
    return A, B


def _chol(A):
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise ModelError("weighted normal equations are singular (rank-deficient design)") from None


def _chol_solve(L, b):
    return np.linalg.solve(L.T, np.linalg.solve(L, b))


def _gls(X, y, w):
    A, _ = _normal_matrices(X, w)
    L = _chol(A)
    return _chol_solve(L, X.T @ (w * y)), L


def loglik(beta, sigma2_u, estimates, X) -> float:
    """Marginal log-likelihood (additive constants dropped)."""
    if sigma2_u < 0:
        raise ValueError("sigma2_u must be >= 0")
    y, v, _ = _unpack(estimates)
    X = _design_array(X)
    tot = sigma2_u + v
    r = y - X @ np.asarray(beta, dtype=float)
    return -0.5 * float(np.sum(np.log(tot) + r * r / tot))


def reml_loglik(beta, sigma2_u, estimates, X) -> float:
    """Restricted log-likelihood: :func:`loglik` minus half the log-determinant
    of ``sum_i x_i x_i' / (sigma2_u + se_i**2)``."""
    if sigma2_u < 0:
        raise ValueError("sigma2_u must be >= 0")
    y, v, _ = _unpack(estimates)
    Xa = _design_array(X)
    A, _ = _normal_matrices(Xa, 1.0 / (sigma2_u + v))
    sign, logdet = np.linalg.slogdet(A)
    if sign <= 0:
        raise ModelError("design is rank deficient")
    return loglik(beta, sigma2_u, estimates, Xa) - 0.5 * float(logdet)


def profile_reml(sigma2_u, y, v, X) -> float:
    """Restricted log-likelihood with ``beta`` replaced by its GLS solution."""
    w = 1.0 / (sigma2_u + v)
    beta, L = _gls(X, y, w)
    r = y - X @ beta
    return -0.5 * float(
        np.sum(np.log(sigma2_u + v) + w * r * r) + 2.0 * np.sum(np.log(np.diag(L)))
    )


@dataclass(frozen=True, eq=False)
class BettaFit:
    beta: np.ndarray
    sigma2_u: float
    cov_beta: np.ndarray
    weights: np.ndarray
    residuals: np.ndarray
    converged: bool
    iterations: int
    c_hat: np.ndarray
    se: np.ndarray
    design: DesignMatrix
    sample_ids: tuple[str, ...] | None = None
    method: str = "fixed-point"
    trace: tuple = field(default_factory=tuple)

    @property
    def se_beta(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_beta))

    @property
    def fitted(self) -> np.ndarray:
        return self.design.values @ self.beta

    @property
    def m(self) -> int:
        return self.design.m

    @property
    def p(self) -> int:
        return self.design.p

    @property
    def reml_loglik(self) -> float:
        return reml_loglik(self.beta, self.sigma2_u, (self.c_hat, self.se), self.design)


def _align(estimates, X):
    y, v, ids = _unpack(estimates)
    if not isinstance(X, DesignMatrix):
        X = DesignMatrix(np.asarray(X, dtype=float), tuple(f"x{k}" for k in range(np.shape(X)[1])))
    if ids is not None and X.row_ids is not None:
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate sample ids among estimates")
        X = X.reorder(ids)
    if X.m != y.size:
        raise ModelError(f"{y.size} estimates but the design has {X.m} rows")
    return y, v, ids, X


def fit(estimates, X, tol: float = 1e-8, max_iter: int = 1000) -> BettaFit:
    """Fit ``beta`` and ``sigma2_u`` by restricted maximum likelihood.

    ``estimates`` is a list of :class:`RichnessEstimate` (aligned with ``X`` by
    sample id when the design carries row ids) or a ``(c_hat, se)`` pair in row
    order. Iteration starts from the sample variance of ``c_hat``; each step
    updates ``sigma2_u`` from the current residuals and then re-solves for
    ``beta`` by generalised least squares at the new value. Negative variance
    updates are clamped at zero. If the restricted likelihood falls on two
    consecutive steps the iteration is abandoned for a profiled grid search
    over ``sigma2_u``.
    """
    y, v, ids, D = _align(estimates, X)
    Xa = D.values
    m, k = Xa.shape
    if m < k + 1:
        raise ModelError(f"need at least {k + 1} samples for {k} coefficients, got {m}")

    s2 = float(np.var(y, ddof=1)) if m > 1 else 0.0
    beta = _gls(Xa, y, 1.0 / (s2 + v))[0]
    trace = []
    converged = False
    method = "fixed-point"
    prev_ll = -math.inf
    drops = 0
    it = 0
    for it in range(1, max_iter + 1):
        # beta is the GLS solution at the current s2, so (beta, s2) is always a consistent pair
        w = 1.0 / (s2 + v)
        A, B = _normal_matrices(Xa, w)
        L = _chol(A)
        G = float(np.trace(_chol_solve(L, B)))
        r = y - Xa @ beta
        w2 = w * w
        s2_new = max(0.0, (float(np.sum(w2 * (r * r - v))) + G) / float(np.sum(w2)))
        beta_new = _gls(Xa, y, 1.0 / (s2_new + v))[0]
        step = max(
            float(np.max(np.abs(beta_new - beta) / (1.0 + np.abs(beta_new)))),
            abs(s2_new - s2) / (1.0 + s2_new),
        )
        beta, s2 = beta_new, s2_new
        ll = profile_reml(s2, y, v, Xa)
        trace.append((it, float(s2), ll))
        if step < tol:
            converged = True
            break
        # only decreases above rounding noise count as oscillation
        drops = drops + 1 if ll < prev_ll - 1e-12 * (1.0 + abs(prev_ll)) else 0
        prev_ll = ll
        if drops >= 2:
            s2 = _grid_search(y, v, Xa)
            method = "grid-fallback"
            converged = True
            break

    if not converged:
        warnings.warn(
            f"REML iteration did not converge in {max_iter} iterations", RuntimeWarning, stacklevel=2
        )
    w = 1.0 / (s2 + v)
    beta, L = _gls(Xa, y, w)
    Linv = np.linalg.inv(L)
    cov = Linv.T @ Linv
    cov = 0.5 * (cov + cov.T)
    for arr in (beta, cov, w):
        arr.setflags(write=False)
    resid = y - Xa @ beta
    resid.setflags(write=False)
    c_hat = y.copy()
    se = np.sqrt(v)
    c_hat.setflags(write=False)
    se.setflags(write=False)
    return BettaFit(
        beta=beta,
        sigma2_u=float(s2),
        cov_beta=cov,
        weights=w,
        residuals=resid,
        converged=converged,
        iterations=it,
        c_hat=c_hat,
        se=se,
        design=D,
        sample_ids=ids if ids is not None else D.row_ids,
        method=method,
        trace=tuple(trace),
    )


def _grid_search(y, v, X, n_points: int = 201) -> float:
    hi = 10.0 * max(float(np.var(y, ddof=1)), float(np.max(v)))
    lo = 1e-4 * float(np.min(v))
    grid = np.concatenate([[0.0], np.logspace(math.log10(lo), math.log10(hi), n_points)])
    values = np.array([profile_reml(g, y, v, X) for g in grid])
    k = int(np.argmax(values))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, grid.size - 1)]
    res = optimize.minimize_scalar(
        lambda s: -profile_reml(s, y, v, X), bounds=(a, b), method="bounded",
        options={"xatol": 1e-10 * max(b, 1.0)},
    )
    return float(res.x) if -res.fun >= values[k] else float(grid[k])


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int | None
    p_value: float
    kind: str
    label: str | None = None

    __test__ = False


def marginal_test(fit: BettaFit, j: int) -> TestResult:
    """Wald z test of ``beta_j = 0`` with a two-sided normal p-value."""
    if not 0 <= j <= fit.p:
        raise IndexError(f"coefficient index {j} out of range 0..{fit.p}")
    z = float(fit.beta[j] / math.sqrt(fit.cov_beta[j, j]))
    return TestResult(z, None, normal_two_sided(z), "marginal_wald", fit.design.column_names[j])


def global_statistic(fit: BettaFit) -> float:
    b = fit.beta[1:]
    Xr = fit.design.values[:, 1:]
    eta = Xr @ b
    return float(np.sum(fit.weights * eta * eta))


def global_test(fit: BettaFit) -> TestResult:
    """Chi-square test that every non-intercept coefficient is zero.

    The statistic is ``b' X_r' W^-1 X_r b`` over the non-intercept columns
    ``X_r`` and coefficients ``b``, with ``W = diag(se_i**2 + s2_u)``. This is
    not the inverse of the matching block of ``Cov(beta)`` unless the
    covariates are weight-orthogonal to the intercept.
    """
    if fit.p == 0:
        raise ModelError("no non-intercept covariates")
    stat = global_statistic(fit)
    return TestResult(stat, fit.p, chi2_sf(stat, fit.p), "global_chisq")


def q_test(fit: BettaFit) -> TestResult:
    """Homogeneity test: ``Q = sum r_i**2 / se_i**2`` against chi-square(m-p-1)."""
    df = fit.m - fit.p - 1
    if df < 1:
        raise ModelError(f"Q test needs m - p - 1 >= 1, got {df}")
    q = float(np.sum(fit.residuals**2 / fit.se**2))
    return TestResult(q, df, chi2_sf(q, df), "homogeneity_q")


@dataclass(frozen=True, eq=False)
class BlupResult:
    u_star: np.ndarray
    c_star: np.ndarray
    var_c_star: np.ndarray
    sample_ids: tuple[str, ...] | None = None
    caveat: str = BLUP_VARIANCE_CAVEAT


def blup(fit: BettaFit) -> BlupResult:
    s2 = fit.se**2
    k = fit.sigma2_u / (fit.sigma2_u + s2)
    u = k * fit.residuals
    X = fit.design.values
    lev = np.einsum("ij,jk,ik->i", X, fit.cov_beta, X)
    var = s2 * k + (1.0 - k) ** 2 * lev
    return BlupResult(u, fit.fitted + u, var, fit.sample_ids)


@dataclass(frozen=True)
class IntervalRow:
    sample_id: str
    lower: float
    center: float
    upper: float
    flagged: bool

    @property
    def width(self) -> float:
        return self.upper - self.lower


def interval_plot_data(estimates: Sequence[RichnessEstimate], threshold: float = 0.1) -> list[IntervalRow]:
    """``c_hat -/+ 2 se`` per sample, flagging suspiciously narrow intervals.

    An interval is flagged when its width is below ``threshold`` times the
    median width; such estimates can dominate the fit.
    """
    if not estimates:
        return []
    widths = np.array([4.0 * e.se for e in estimates])
    cut = threshold * float(np.median(widths))
    return [
        IntervalRow(e.sample_id, e.c_hat - 2.0 * e.se, e.c_hat, e.c_hat + 2.0 * e.se, bool(wd < cut))
        for e, wd in zip(estimates, widths)
    ]
