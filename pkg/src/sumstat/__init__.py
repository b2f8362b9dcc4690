"""
sumstat: exact, truncation-controlled PDF and CDF series for sums of
mixed independent positive random variables.

Each summand is described by the coefficient stream of its Laplace
transform expansion; streams compose into one series for the sum, which
is evaluated with an analytic truncation bound certifying the domain.
Front-end constructors cover several envelope-distribution families and
ratio models, and an oracle layer (Monte Carlo plus grid convolution)
cross-checks every analytic output.
"""

from sumstat.specfun import PrecisionContext, DEFAULT_CONTEXT, mpreal
from sumstat.sumcore import (
    CoefficientStream,
    LaplaceSeriesDescriptor,
    SumSeries,
    TruncationPolicy,
    select_term_count,
    sum_cdf,
    sum_density,
    truncation_bound,
)
from sumstat.fading import (
    AekmParams,
    AlphaMuMixtureModel,
    GaussianConstructionSpec,
    MftrParams,
    RatioAlphaMuModel,
    aekm_model,
    alpha_mu_model,
    gaussian_construction_model,
    kappa_mu_model,
    mftr_model,
    mixture_marginal_cdf,
    mixture_marginal_pdf,
    mixture_to_series,
    ratio_to_series,
)
from sumstat.cli import ScenarioConfig, load_config, parse_config

__version__ = "0.1.0"

__all__ = [
    "AekmParams",
    "AlphaMuMixtureModel",
    "CoefficientStream",
    "DEFAULT_CONTEXT",
    "GaussianConstructionSpec",
    "LaplaceSeriesDescriptor",
    "MftrParams",
    "PrecisionContext",
    "RatioAlphaMuModel",
    "ScenarioConfig",
    "SumSeries",
    "TruncationPolicy",
    "aekm_model",
    "alpha_mu_model",
    "gaussian_construction_model",
    "kappa_mu_model",
    "load_config",
    "mftr_model",
    "mixture_marginal_cdf",
    "mixture_marginal_pdf",
    "mixture_to_series",
    "mpreal",
    "parse_config",
    "ratio_to_series",
    "select_term_count",
    "sum_cdf",
    "sum_density",
    "truncation_bound",
    "__version__",
]
