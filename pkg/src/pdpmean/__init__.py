"""Mean and range estimation for Gaussian data under personalized differential privacy."""

from .core import Dataset, NoiseSource, Record, clip, sample_keep, sample_laplace
from .diffusion import diffuse, effective_budget, plan_rates, saturate
from .errors import PDPError
from .mean import EstimationReport, adpm, lower_bound, pdp_mean_bounded
from .range import RangeEstimate, estimate_range
from .unbounded import pdp_mean_unbounded, shrink

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EstimationReport",
    "NoiseSource",
    "PDPError",
    "RangeEstimate",
    "Record",
    "adpm",
    "clip",
    "diffuse",
    "effective_budget",
    "estimate_range",
    "lower_bound",
    "pdp_mean_bounded",
    "pdp_mean_unbounded",
    "plan_rates",
    "sample_keep",
    "sample_laplace",
    "saturate",
    "shrink",
]
