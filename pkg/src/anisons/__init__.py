"""Spectral simulation and statistical checks for the stochastic damped
anisotropic Navier-Stokes system on a periodic box."""

from ._accel import backend_name
from .spectral import Grid, ScalarField, SpectralVector, SpectralVelocity

__version__ = "0.1.0"

__all__ = ["Grid", "ScalarField", "SpectralVector", "SpectralVelocity", "backend_name", "__version__"]
