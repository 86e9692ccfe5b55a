"""Upper-tail probabilities for the normal and chi-square reference laws."""

import math

from scipy import special


def normal_sf(x: float) -> float:
    """P(Z > x) for a standard normal Z."""
    return 0.5 * float(special.erfc(x / math.sqrt(2.0)))


def normal_two_sided(z: float) -> float:
    return min(1.0, 2.0 * normal_sf(abs(z)))


def chi2_sf(x: float, df: int) -> float:
    """P(X > x) for X ~ chi-square(df), via the regularised upper incomplete gamma."""
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if x <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def chi2_cdf(x, df: int):
    return special.gammainc(df / 2.0, x / 2.0)


def chi2_quantile(q: float, df: int) -> float:
    return 2.0 * float(special.gammaincinv(df / 2.0, q))
