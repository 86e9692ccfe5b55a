"""Serialisable summaries of a fitted model."""

from __future__ import annotations

from betta.errors import ModelError
from betta.inference import (
    BLUP_VARIANCE_CAVEAT,
    BettaFit,
    blup,
    global_test,
    interval_plot_data,
    marginal_test,
    q_test,
)

SCHEMA_VERSION = 1


def _test_dict(t):
    return {"statistic": t.statistic, "df": t.df, "p_value": t.p_value}


def fit_report(model: BettaFit, estimates, *, excluded=(), levels=None, tol=None, max_iter=None,
               interval_threshold: float = 0.1) -> dict:
    """Everything ``betta fit`` emits, as plain JSON-compatible values."""
    notices = []
    coefficients = []
    for j, name in enumerate(model.design.column_names):
        t = marginal_test(model, j)
        coefficients.append(
            {
                "name": name,
                "estimate": float(model.beta[j]),
                "se": float(model.se_beta[j]),
                "z": t.statistic,
                "p_value": t.p_value,
            }
        )
    try:
        q = _test_dict(q_test(model))
    except ModelError as exc:
        q = None
        notices.append(f"homogeneity test omitted: {exc}")
    g = _test_dict(global_test(model)) if model.p > 0 else None
    if g is None:
        notices.append("global test omitted: no non-intercept covariates")
    if not model.converged:
        notices.append("REML iteration did not converge; estimates are from the last iterate")

    b = blup(model)
    ids = list(model.sample_ids or [f"row{k + 1}" for k in range(model.m)])
    fitted = model.fitted
    blup_rows = [
        {
            "sample_id": ids[k],
            "c_hat": float(model.c_hat[k]),
            "se": float(model.se[k]),
            "fitted": float(fitted[k]),
            "u_star": float(b.u_star[k]),
            "c_star": float(b.c_star[k]),
            "var_c_star": float(b.var_c_star[k]),
        }
        for k in range(model.m)
    ]
    intervals = [
        {"sample_id": r.sample_id, "lower": r.lower, "center": r.center, "upper": r.upper, "flagged": r.flagged}
        for r in interval_plot_data(estimates, interval_threshold)
    ]
    flagged = [r["sample_id"] for r in intervals if r["flagged"]]
    if flagged:
        notices.append(f"unusually narrow intervals (possible outliers): {', '.join(flagged)}")
    return {
        "schema_version": SCHEMA_VERSION,
        "model": {
            "n_samples": model.m,
            "n_covariates": model.p,
            "columns": list(model.design.column_names),
            "reference_levels": {k: v[0] for k, v in (levels or {}).items()},
            "excluded": list(excluded),
        },
        "coefficients": coefficients,
        "sigma2_u": model.sigma2_u,
        "reml_loglik": model.reml_loglik,
        "homogeneity_test": q,
        "global_test": g,
        "convergence": {
            "converged": model.converged,
            "iterations": model.iterations,
            "method": model.method,
            "tol": tol,
            "max_iter": max_iter,
        },
        "blup": blup_rows,
        "blup_caveat": BLUP_VARIANCE_CAVEAT,
        "intervals": intervals,
        "notices": notices,
    }
