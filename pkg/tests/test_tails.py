import pytest

from betta.tails import chi2_quantile, chi2_sf, normal_sf, normal_two_sided
from oracles import chi2_sf_series, normal_sf_quad


@pytest.mark.parametrize("x", [0.0, 0.5, 1.2815515655446004, 1.959963984540054, 3.0, 5.5])
def test_normal_tail_against_quadrature(x):
    assert abs(normal_sf(x) - normal_sf_quad(x)) <= 1e-12


def test_two_sided_at_196():
    assert normal_two_sided(1.96) == pytest.approx(0.05, abs=1e-4)
    assert abs(normal_two_sided(1.96) - 2 * normal_sf_quad(1.96)) <= 1e-12
    assert normal_two_sided(0.0) == 1.0


@pytest.mark.parametrize(
    "x, df",
    [(2.0, 1), (3.841458820694124, 1), (5.991464547107979, 2), (30.14352720564616, 19), (0.3, 19), (60.0, 19), (12.0, 7)],
)
def test_chi2_tail_against_quadrature(x, df):
    assert abs(chi2_sf(x, df) - chi2_sf_series(x, df)) <= 1e-12


@pytest.mark.parametrize("df, q95", [(1, 3.841458820694124), (2, 5.991464547107979), (19, 30.14352720564616)])
def test_chi2_tabulated_quantiles(df, q95):
    assert chi2_quantile(0.95, df) == pytest.approx(q95, rel=1e-12)
    assert chi2_sf(q95, df) == pytest.approx(0.05, abs=1e-12)


def test_chi2_edge_cases():
    assert chi2_sf(0.0, 3) == 1.0
    with pytest.raises(ValueError):
        chi2_sf(1.0, 0)
