"""nlslab: a pseudospectral laboratory for focusing nonlinear Schrodinger
equations — bound states, linearized spectra, exponential-order approximation
profiles, multi-soliton construction and instability experiments."""

from .grid import Field, GridSpec
from .nonlinearity import CubicQuintic, CustomG, PurePower, check_assumptions

__all__ = [
    "Field",
    "GridSpec",
    "PurePower",
    "CubicQuintic",
    "CustomG",
    "check_assumptions",
]
