"""Reflection-axis estimation from Zernike moments, and PSF calibration that uses it."""
from .errors import (
    ConvergenceError,
    DataError,
    DegenerateContrastError,
    FlatContrastError,
    NoAngularInformationError,
    NumericalError,
    ZernsymError,
)
from .grid import ImageGrid
from .symmetry import ContrastSpec, SymmetryEstimate, estimate_axis
from .zernike import MomentSet, ZernikeIndex, estimate_moments, quadrature_moments

__version__ = "0.1.0"
