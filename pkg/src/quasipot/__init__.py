"""Polynomial quasi-potential landscapes from sub-orthogonal decompositions."""

from .basis import BasisSpec, build_basis
from .decompose import DecomposeConfig, DecompositionError, DecompositionResult, decompose, defect, normalize
from .poly import Monomial, Polynomial, VectorField, parse_polynomial

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "DecomposeConfig",
    "DecompositionError",
    "DecompositionResult",
    "Monomial",
    "Polynomial",
    "VectorField",
    "build_basis",
    "decompose",
    "defect",
    "normalize",
    "parse_polynomial",
]
