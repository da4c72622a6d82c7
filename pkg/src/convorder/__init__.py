"""Mean comparison for martingale diffusions ordered by their volatility matrices."""
from .model import (
    Box,
    ConvexPayoff,
    EllipticityCertificate,
    OrderResult,
    VolatilityField,
    constant_field,
    ellipticity_bounds,
    growth_check,
    lipschitz_estimate,
    psd_order,
)
from .sde import MeanEstimate, PathEnsemble, coupled_paths, mc_mean, simulate_paths
from .compare import CompareConfig, ComparisonReport, Verdict, compare_means, hypothesis_suite, monotonicity_report

__version__ = "0.1.0"
