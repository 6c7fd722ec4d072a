"""Finite-scale constructions for recurrence along powers of integer sequences."""

__version__ = "0.1.0"

from .angle import (
    Angle,
    FloorAmbiguityError,
    GeneralizedQuadratic,
    GQTerm,
    IntegerPolynomial,
    PrecisionError,
    angle_from_dyadic,
    angle_from_fraction,
    angle_from_quadratic_irrational,
    frac_poly_eval,
    gq_eval,
    poly_stream,
    sqrt_real,
)
from .setlab import IntegerSet, SetRecipe, TorusWindow, build_set

__all__ = [
    "Angle",
    "FloorAmbiguityError",
    "GeneralizedQuadratic",
    "GQTerm",
    "IntegerPolynomial",
    "IntegerSet",
    "PrecisionError",
    "SetRecipe",
    "TorusWindow",
    "angle_from_dyadic",
    "angle_from_fraction",
    "angle_from_quadratic_irrational",
    "build_set",
    "frac_poly_eval",
    "gq_eval",
    "poly_stream",
    "sqrt_real",
]
