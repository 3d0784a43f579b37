"""Probabilistic invariants for polynomial probabilistic transition systems."""

from .poly import Polynomial, parse_inequality, parse_polynomial
from .pts import Pts, load_pts, validate_nondemonic
from .preexp import LocPoly, initial_expectation, preexp_pts

__all__ = ["LocPoly", "Polynomial", "Pts", "initial_expectation", "load_pts", "parse_inequality",
           "parse_polynomial", "preexp_pts", "validate_nondemonic"]
