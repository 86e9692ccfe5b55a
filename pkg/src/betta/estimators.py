"""Richness estimates ``(c_hat, se)`` from frequency-count tables.

Two in-house estimators are provided, plus a loader for estimates produced
by external software.

Zero-truncated negative binomial (``ztnb-mle``)
    The observed abundances are modelled as NB draws conditioned on being
    positive. With mean ``mu`` and dispersion ``phi = 1/size`` the zero class
    has probability ``pi0 = (1 + mu*phi) ** (-1/phi)``. The truncated
    log-likelihood is maximised over ``(log mu, log phi)`` (an unconstrained
    reparametrisation of size/probability) from three deterministic starts.
    Then ``c_hat = c / (1 - pi0_hat)`` and

        Var(c_hat) = c_hat * pi0 / (1 - pi0)                 (binomial completion)
                   + c**2 / (1 - pi0)**4 * g' I^{-1} g        (delta method)

    where ``I`` is the observed information of the truncated likelihood and
    ``g`` the gradient of ``pi0``; both are evaluated in ``(log mu, phi)``
    so the Poisson limit ``phi -> 0`` stays regular.

Bias-corrected Chao (``chao-type``)
    ``c_hat = c + f1 (f1 - 1) / (2 (f2 + 1))`` with variance

        f1(f1-1)/(2(f2+1)) + f1(2 f1-1)**2/(4(f2+1)**2) + f1**2 f2 (f1-1)**2/(4(f2+1)**4)

    When this is zero (``f1 = 0``) the variance falls back to
    ``c * exp(-n/c) * (1 - exp(-n/c))``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import TextIO, Union

import numpy as np
from scipy import optimize, special

from betta.errors import EstimationError, ParseError
from betta.frequency import FrequencyCountTable

METHODS = ("ztnb-mle", "chao-type", "external")
TIGHT_SE_RATIO = 1e-6


@dataclass(frozen=True)
class RichnessEstimate:
    sample_id: str
    c_hat: float
    se: float
    c_obs: int | None = None
    method: str = "external"
    flags: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not math.isfinite(self.c_hat):
            raise ValueError("c_hat must be finite")
        if not (math.isfinite(self.se) and self.se > 0):
            raise ValueError(f"standard error must be finite and > 0, got {self.se}")
        if self.c_obs is not None and self.c_hat < self.c_obs:
            raise ValueError(f"c_hat {self.c_hat} is below observed richness {self.c_obs}")

    @property
    def variance(self) -> float:
        return self.se * self.se


def _flags_for(c_hat: float, se: float) -> tuple[str, ...]:
    if se < TIGHT_SE_RATIO * c_hat:
        return ("tight-se",)
    return ()


# ---------------------------------------------------------------------------
# zero-truncated negative binomial
# ---------------------------------------------------------------------------

_SERIES_U = 1e-3


def _h(u):
    """(log1p(u) - u/(1+u)) / u**2, with its series near zero."""
    if abs(u) < _SERIES_U:
        return sum((-1) ** k * (k + 1) / (k + 2) * u**k for k in range(8))
    return (math.log1p(u) - u / (1.0 + u)) / (u * u)


def _dh(u):
    if abs(u) < _SERIES_U:
        return sum((-1) ** k * k * (k + 1) / (k + 2) * u ** (k - 1) for k in range(1, 8))
    return 1.0 / (u * (1.0 + u) ** 2) - 2.0 * _h(u) / u


class _TruncatedNB:
    """Truncated NB log-likelihood and derivatives in ``(m = log mu, phi)``."""

    # exact cumulative sums are used while the largest frequency is modest
    CUMSUM_LIMIT = 200_000

    def __init__(self, table: FrequencyCountTable):
        self.j = np.array(table.frequencies, dtype=float)
        self.f = np.array(table.counts, dtype=float)
        self.c = float(table.c_obs)
        self.jmax = int(self.j.max())
        self.idx = self.j.astype(np.int64) - 1
        self._k = np.arange(self.jmax, dtype=float)
        self._lfact = float(np.dot(self.f, special.gammaln(self.j + 1.0)))

    def _s_terms(self, phi):
        """S_j, S_j', S_j'' for S_j(phi) = sum_{k<j} log1p(k phi)."""
        if self.jmax <= self.CUMSUM_LIMIT:
            kp = self._k * phi
            s0 = np.cumsum(np.log1p(kp))[self.idx]
            s1 = np.cumsum(self._k / (1.0 + kp))[self.idx]
            s2 = -np.cumsum((self._k / (1.0 + kp)) ** 2)[self.idx]
            return s0, s1, s2
        r = 1.0 / phi
        j = self.j
        s0 = special.gammaln(j + r) - special.gammaln(r) + j * math.log(phi)
        s1 = j / phi - (special.digamma(j + r) - special.digamma(r)) / phi**2
        dpsi = special.digamma(j + r) - special.digamma(r)
        dtri = special.polygamma(1, j + r) - special.polygamma(1, r)
        s2 = -j / phi**2 + 2.0 * dpsi / phi**3 + dtri / phi**4
        return s0, s1, s2

    def log_pi0(self, m, phi):
        mu = math.exp(m)
        return -mu * math.log1p(mu * phi) / (mu * phi) if phi != 0 else -mu

    def evaluate(self, m, phi, order=2):
        """Return loglik (and gradient, Hessian in (m, phi) if requested)."""
        mu = math.exp(m)
        u = mu * phi
        L = math.log1p(u)
        logpi0 = -mu if u == 0 else -mu * L / u
        pi0 = math.exp(logpi0)
        trunc = -math.log(-math.expm1(logpi0))
        s0, s1, s2 = self._s_terms(phi)
        j, f, c = self.j, self.f, self.c
        if u == 0:
            lin = -mu
        else:
            lin = -L / phi
        ll = float(np.dot(f, s0 + j * m - j * L)) + c * lin + c * trunc - self._lfact
        if order == 0:
            return ll
        q = pi0 / -math.expm1(logpi0)
        hu, dhu = _h(u), _dh(u)
        a_m = -mu / (1.0 + u)
        a_p = mu * mu * hu
        n = float(np.dot(f, j))
        g_m = (n - c * mu) / (1.0 + u) + c * q * a_m
        g_p = float(np.dot(f, s1)) - n * mu / (1.0 + u) + c * mu * mu * hu + c * q * a_p
        grad = np.array([g_m, g_p])
        if order == 1:
            return ll, grad
        u1 = (1.0 + u) ** 2
        h_mm = -(c * mu + n * u) / u1
        h_mp = -(n - c * mu) * mu / u1
        h_pp = float(np.dot(f, s2)) + n * mu * mu / u1 + c * mu**3 * dhu
        a_mm = -mu / u1
        a_mp = 2.0 * mu * mu * hu + mu * mu * u * dhu
        a_pp = mu**3 * dhu
        q2 = q * (1.0 + q)
        hess = np.array(
            [
                [h_mm + c * (q * a_mm + q2 * a_m * a_m), h_mp + c * (q * a_mp + q2 * a_m * a_p)],
                [h_mp + c * (q * a_mp + q2 * a_m * a_p), h_pp + c * (q * a_pp + q2 * a_p * a_p)],
            ]
        )
        return ll, grad, hess

    def pi0_gradient(self, m, phi):
        mu = math.exp(m)
        u = mu * phi
        pi0 = math.exp(self.log_pi0(m, phi))
        return pi0, pi0 * np.array([-mu / (1.0 + u), mu * mu * _h(u)])


_ETA_BOUNDS = (math.log(1e-10), math.log(1e4))
_M_BOUNDS = (math.log(1e-8), math.log(1e8))


def _starting_points(table: FrequencyCountTable):
    j = np.array(table.frequencies, dtype=float)
    f = np.array(table.counts, dtype=float)
    c = f.sum()
    mean = float(np.dot(f, j) / c)
    var = float(np.dot(f, (j - mean) ** 2) / max(c - 1.0, 1.0))
    phi0 = max((var - mean) / (mean * mean), 1e-3)
    m0 = math.log(mean)
    return [
        (m0, math.log(phi0)),
        (m0 - 0.25, math.log(phi0 * 10.0)),
        (m0 + 0.25, math.log(phi0 * 0.1)),
    ]


def estimate_ztnb(t: FrequencyCountTable, max_iter: int = 500, ftol: float = 1e-10) -> RichnessEstimate:
    """Richness estimate from a zero-truncated negative binomial fit.

    Raises
    ------
    EstimationError
        Fewer than 2 distinct frequencies or fewer than 10 observed species,
        optimiser failure at every start, a singular information matrix, or a
        fitted zero class approaching 1.
    """
    if len(t.entries) < 2:
        raise EstimationError("need at least 2 distinct frequencies for a negative binomial fit")
    if t.c_obs < 10:
        raise EstimationError(f"need at least 10 observed species, got {t.c_obs}")
    model = _TruncatedNB(t)

    def objective(x):
        m, eta = x
        phi = math.exp(eta)
        ll, g = model.evaluate(m, phi, order=1)
        return -ll, -np.array([g[0], g[1] * phi])

    trace = []
    best = None
    for start in _starting_points(t):
        x0 = np.clip(start, [_M_BOUNDS[0], _ETA_BOUNDS[0]], [_M_BOUNDS[1], _ETA_BOUNDS[1]])
        with np.errstate(all="ignore"):
            res = optimize.minimize(
                objective,
                x0,
                jac=True,
                method="L-BFGS-B",
                bounds=[_M_BOUNDS, _ETA_BOUNDS],
                options={"maxiter": max_iter, "ftol": ftol, "gtol": 1e-8},
            )
        trace.append(
            {"start": [float(v) for v in x0], "loglik": float(-res.fun), "nit": int(res.nit),
             "status": int(res.status), "message": str(res.message)}
        )
        if not np.isfinite(res.fun):
            continue
        # status 2 (line search stalled) at a stationary point is accepted
        ok = res.status == 0 or (res.status == 2 and _stationary(model, res.x))
        if ok and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise EstimationError("negative binomial fit did not converge", trace=trace)

    m, eta = best.x
    phi = math.exp(eta)
    pi0, g = model.pi0_gradient(m, phi)
    if not pi0 < 1.0 - 1e-8:
        raise EstimationError("estimate unstable: fitted zero class probability is near 1", trace=trace)
    _, _, hess = model.evaluate(m, phi)
    info = -hess
    try:
        chol = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise EstimationError("observed information is not positive definite", trace=trace) from None
    z = np.linalg.solve(chol, g)
    var_pi0 = float(z @ z)
    c = float(t.c_obs)
    keep = -math.expm1(model.log_pi0(m, phi))
    c_hat = c / keep
    var = c * pi0 / keep**2 + (c / keep**2) ** 2 * var_pi0
    se = math.sqrt(var)
    if not se > 0:
        raise EstimationError("standard error underflowed to zero", trace=trace)
    return RichnessEstimate(t.sample_id, c_hat, se, t.c_obs, "ztnb-mle", _flags_for(c_hat, se))


def _stationary(model, x, tol=1e-5):
    m, eta = x
    phi = math.exp(eta)
    _, g = model.evaluate(m, phi, order=1)
    scaled = np.abs([g[0], g[1] * phi])
    return bool(np.all(scaled < tol * max(1.0, model.c)))


# ---------------------------------------------------------------------------
# Chao-type lower bound
# ---------------------------------------------------------------------------


def estimate_chao(t: FrequencyCountTable) -> RichnessEstimate:
    """Bias-corrected Chao estimate (defined for ``f2 = 0``)."""
    c = t.c_obs
    f1, f2 = t.count(1), t.count(2)
    c_hat = c + f1 * (f1 - 1) / (2.0 * (f2 + 1))
    var = (
        f1 * (f1 - 1) / (2.0 * (f2 + 1))
        + f1 * (2 * f1 - 1) ** 2 / (4.0 * (f2 + 1) ** 2)
        + f1 * f1 * f2 * (f1 - 1) ** 2 / (4.0 * (f2 + 1) ** 4)
    )
    if var > 0:
        se = math.sqrt(var)
    else:
        ratio = t.n / c
        log_var = math.log(c) - ratio + math.log(-math.expm1(-ratio))
        se = max(math.exp(0.5 * log_var), np.finfo(float).tiny)
    return RichnessEstimate(t.sample_id, float(c_hat), se, c, "chao-type", _flags_for(c_hat, se))


# ---------------------------------------------------------------------------
# externally produced estimates
# ---------------------------------------------------------------------------

_EXTERNAL_COLUMNS = ("sample_id", "c_hat", "se", "c_obs")


def load_external_estimates(text: Union[str, TextIO], source: str | None = None) -> list[RichnessEstimate]:
    """Read ``sample_id,c_hat,se[,c_obs]`` rows (header optional).

    With a header, columns are matched by name and extra columns are ignored,
    so the output of ``betta estimate`` can be read back directly.
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    rows = [(i, r) for i, r in enumerate(csv.reader(stream), start=1) if r and any(x.strip() for x in r)]
    rows = [(i, r) for i, r in rows if not r[0].lstrip().startswith("#")]
    if not rows:
        raise ParseError("no estimates found", source=source)
    columns = {name: k for k, name in enumerate(_EXTERNAL_COLUMNS)}
    header = [x.strip() for x in rows[0][1]]
    if "c_hat" in header:
        missing = [c for c in ("sample_id", "c_hat", "se") if c not in header]
        if missing:
            raise ParseError(f"header lacks columns {missing}", line=rows[0][0], source=source)
        columns = {name: header.index(name) for name in _EXTERNAL_COLUMNS if name in header}
        rows = rows[1:]

    out = []
    seen = set()
    for lineno, row in rows:
        cells = [x.strip() for x in row]

        def cell(name):
            k = columns.get(name)
            if k is None or k >= len(cells) or cells[k] in ("", "-", "NA"):
                return None
            return cells[k]

        sid = cell("sample_id")
        if sid is None:
            raise ParseError("missing sample_id", line=lineno, source=source)
        if sid in seen:
            raise ParseError(f"duplicate sample_id {sid!r}", line=lineno, source=source)
        seen.add(sid)
        c_hat = _number(cell("c_hat"), "c_hat", lineno, source)
        c_obs_raw = cell("c_obs")
        c_obs = None
        if c_obs_raw is not None:
            c_obs = int(_number(c_obs_raw, "c_obs", lineno, source))
            if c_hat < c_obs:
                raise ParseError(
                    f"c_hat {c_hat} is below observed richness {c_obs}", line=lineno, source=source
                )
        se_raw = cell("se")
        if se_raw is None:
            raise ParseError("missing standard error", line=lineno, source=source)
        se = _number(se_raw, "se", lineno, source)
        if not se > 0:
            raise ParseError(
                f"standard error must be > 0 (got {se}); the model needs a positive sampling variance",
                line=lineno,
                source=source,
            )
        out.append(RichnessEstimate(sid, c_hat, se, c_obs, "external", _flags_for(c_hat, se)))
    return out


def _number(raw, name, lineno, source):
    if raw is None:
        raise ParseError(f"missing {name}", line=lineno, source=source)
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"{name} is not a number: {raw!r}", line=lineno, source=source) from None
    if not math.isfinite(value):
        raise ParseError(f"{name} is not finite", line=lineno, source=source)
    return value
