"""Simulation and numerical-verification lab for anisotropic Gaussian random
fields driven by linear stochastic heat/wave equations.

Submodules:
    model       anisotropy exponents, Delta metric, critical dimension
    spectral    kernel amplitudes, frequency bands, discretized grids
    covariance  deterministic quadrature engine for second moments
    synth       Gaussian sampling on point sets, projection decomposition
    oscillation Monte Carlo experiments for oscillation/small-ball laws
    covering    anisotropic dyadic covers and their audit
    hitting     hitting-probability scaling experiments
    cli         experiment runner
"""

from anisofield.model import (
    AnisotropyProfile,
    Box,
    Equation,
    ModelParams,
    anisotropy_profile,
    critical_dimension,
    delta_metric,
    heat_profile,
    wave_profile,
)

__all__ = [
    "AnisotropyProfile",
    "Box",
    "Equation",
    "ModelParams",
    "anisotropy_profile",
    "critical_dimension",
    "delta_metric",
    "heat_profile",
    "wave_profile",
]

__version__ = "0.1.0"
