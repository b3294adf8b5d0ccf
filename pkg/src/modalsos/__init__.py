"""Moment-SOS relaxations for switched-system optimal control."""

from .poly import (
    ParseError,
    PolyError,
    Polynomial,
    VariableSpace,
    lie_derivative,
    monomials_up_to,
    parse_polynomial,
)

__all__ = [
    "ParseError",
    "PolyError",
    "Polynomial",
    "VariableSpace",
    "lie_derivative",
    "monomials_up_to",
    "parse_polynomial",
]
