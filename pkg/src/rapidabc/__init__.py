"""Likelihood-free inference with SMC-ABC accelerated by approximate models."""

from .core import (
    BoxPrior,
    Streams,
    ThresholdSchedule,
    WeightedPopulation,
    euclidean_discrepancy,
    frobenius_discrepancy,
    multinomial_resample,
)
from .kernels import GaussianKernel, adapt_kernel
from .moment import empirical_moments, moment_error, moment_match_transform
from .samplers import (
    Discrepancy,
    MmConfig,
    Model,
    SamplerReport,
    abc_rejection,
    mm_smc_abc,
    pc_smc_abc,
    smc_abc,
)

__version__ = "0.1.0"

__all__ = [
    "BoxPrior", "Streams", "ThresholdSchedule", "WeightedPopulation", "euclidean_discrepancy",
    "frobenius_discrepancy", "multinomial_resample", "GaussianKernel", "adapt_kernel",
    "empirical_moments", "moment_error", "moment_match_transform", "Discrepancy", "MmConfig",
    "Model", "SamplerReport", "abc_rejection", "mm_smc_abc", "pc_smc_abc", "smc_abc",
]
