"""Simulation lab for online SGD on mixed-cumulant data.

Data models with spikes planted in the mean, covariance and higher-order
cumulants; spherical-perceptron and two-layer training loops; Hermite
series machinery for the population loss; and a sweep harness for
sample-complexity scaling experiments.
"""

__version__ = "0.1.0"

from .errors import (
    AssumptionViolationError,
    DivergenceError,
    NumericalAccuracyError,
)
from .sampling import LatentCoupling, RngHandle, sample_latent_pair, sample_unit_sphere
from .mcm import CensorMode, McmParams, SpikeSet

__all__ = [
    "AssumptionViolationError",
    "DivergenceError",
    "NumericalAccuracyError",
    "LatentCoupling",
    "RngHandle",
    "sample_latent_pair",
    "sample_unit_sphere",
    "CensorMode",
    "McmParams",
    "SpikeSet",
    "__version__",
]
