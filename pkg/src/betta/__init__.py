"""Mixed-effects modelling of total species richness.

Richness estimates with standard errors are treated like study effects in a
random-effects meta-analysis: covariate effects are fitted by restricted
maximum likelihood, heterogeneity is tested with a Q statistic, and the
random effects are predicted (BLUP) to give shrunken richness estimates.
"""

from betta.errors import BettaError, EstimationError, ModelError, ParseError
from betta.frequency import (
    AbundanceVector,
    FrequencyCountTable,
    from_abundances,
    parse_abundances,
    parse_frequency_table,
    simpson_plugin,
)
from betta.estimators import (
    RichnessEstimate,
    estimate_chao,
    estimate_ztnb,
    load_external_estimates,
)
from betta.inference import (
    BettaFit,
    BlupResult,
    DesignMatrix,
    TestResult,
    blup,
    fit,
    global_test,
    interval_plot_data,
    loglik,
    marginal_test,
    q_test,
    reml_loglik,
)

__version__ = "0.1.0"

__all__ = [
    "AbundanceVector",
    "BettaError",
    "BettaFit",
    "BlupResult",
    "DesignMatrix",
    "EstimationError",
    "FrequencyCountTable",
    "ModelError",
    "ParseError",
    "RichnessEstimate",
    "TestResult",
    "blup",
    "estimate_chao",
    "estimate_ztnb",
    "fit",
    "from_abundances",
    "global_test",
    "interval_plot_data",
    "load_external_estimates",
    "loglik",
    "marginal_test",
    "parse_abundances",
    "parse_frequency_table",
    "q_test",
    "reml_loglik",
    "simpson_plugin",
]
