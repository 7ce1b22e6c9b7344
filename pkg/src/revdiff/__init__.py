"""Bayesian nonparametric inference for reversible diffusions on the torus."""

from .basis import BasisDescriptor, CoefficientVector, FourierIndex, WaveletIndex
from .diffusion import Potential
from .priors import GaussianPriorSpec, PExpPriorSpec
from .sde import PathRecord, SimConfig, simulate

__all__ = [
    "BasisDescriptor",
    "CoefficientVector",
    "FourierIndex",
    "GaussianPriorSpec",
    "PExpPriorSpec",
    "PathRecord",
    "Potential",
    "SimConfig",
    "WaveletIndex",
    "simulate",
]
