"""Flock contact process: exact simulation and extinction-threshold analytics.

Sites of Z^d hold flocks of 0..N individuals.  A flock grows internally at
rate i*phi, a full flock (size N) seeds each nearest neighbour at rate lambda,
and every flock is wiped out at rate 1.
"""

from flockcp.model import (
    INFINITY,
    Configuration,
    ModelParams,
    SiteRates,
    SparseUnbounded,
    Torus,
    neighbors,
    site_rates,
    total_rate,
)
from flockcp.analytics import (
    GwResult,
    OffspringDist,
    ThresholdReport,
    compute_threshold,
    gw_extinction,
    offspring_pmf,
    simulate_gw,
    smallest_extinct_N,
)

__version__ = "0.1.0"

__all__ = [
    "INFINITY",
    "Configuration",
    "ModelParams",
    "SiteRates",
    "SparseUnbounded",
    "Torus",
    "neighbors",
    "site_rates",
    "total_rate",
    "GwResult",
    "OffspringDist",
    "ThresholdReport",
    "compute_threshold",
    "gw_extinction",
    "offspring_pmf",
    "simulate_gw",
    "smallest_extinct_N",
    "__version__",
]
