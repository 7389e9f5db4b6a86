"""Lag-L empirical autocovariance matrices of high-dimensional stationary series.

Simulation, deterministic equivalents of the hermitized resolvent, Girko
log-potentials, Christoffel-Darboux covariances and small singular values.
"""

__version__ = "0.1.0"

from .linalg import ContractViolation, ConvergenceError
from .models import SpectralDensityModel, ModelError

__all__ = ["ContractViolation", "ConvergenceError", "SpectralDensityModel", "ModelError", "__version__"]
