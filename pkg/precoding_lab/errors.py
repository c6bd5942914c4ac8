#!/usr/bin/env python3
"""
Exceptions for the Multibeam Precoding Lab

Every error raised by the library derives from PrecodingLabError and carries a
stable ``code`` that the runner writes into diagnostics.csv when a sweep cell fails.
"""


class PrecodingLabError(Exception):
    """Base class for all precoding lab errors"""

    code = "PRECODING_LAB_ERROR"


class ConfigError(PrecodingLabError, ValueError):
    """Scenario configuration is missing, malformed or inconsistent"""

    code = "CONFIG_ERROR"


class IoError(PrecodingLabError):
    """A report or channel file could not be read or written"""

    code = "IO_ERROR"


class InvalidGeometry(PrecodingLabError, ValueError):
    """Beam geometry violates its invariants"""

    code = "INVALID_GEOMETRY"


class ParseError(PrecodingLabError, ValueError):
    """A channel or table file contains a malformed field"""

    code = "PARSE_ERROR"


class DimensionError(PrecodingLabError, ValueError):
    """Matrix or stream dimensions do not agree"""

    code = "DIMENSION_ERROR"


class NonFiniteEntries(PrecodingLabError, ValueError):
    """A matrix contains NaN or Inf"""

    code = "NON_FINITE"


class RankDeficient(PrecodingLabError):
    """The Gram matrix to be inverted is numerically singular"""

    code = "RANK_DEFICIENT"


class NonConvergence(PrecodingLabError):
    """An iterative solver hit its iteration cap

    Attributes:
        mismatch (float): Final convergence measure when the solver stopped
        iterations (int): Number of iterations performed
    """

    code = "NON_CONVERGENCE"

    def __init__(self, message, mismatch=float("nan"), iterations=0):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class NumericalBreakdown(PrecodingLabError):
    """A dual variable underflowed to zero while its constraint was still violated"""

    code = "NUMERICAL_BREAKDOWN"


class DivergenceDetected(PrecodingLabError):
    """Uplink powers exceeded the configured cap"""

    code = "DIVERGENCE"


class InfeasibleTargets(PrecodingLabError):
    """SNIR targets cannot be met with positive downlink powers"""

    code = "INFEASIBLE_TARGETS"


class DegenerateRow(PrecodingLabError):
    """A precoder row is too small to be rescaled"""

    code = "DEGENERATE_ROW"


class ColoringError(PrecodingLabError, ValueError):
    """Frequency reuse colouring does not match the beam count"""

    code = "COLORING_ERROR"


class InvalidOrder(PrecodingLabError, ValueError):
    """Hadamard order is not a power of two"""

    code = "INVALID_ORDER"


class ModcodTableError(PrecodingLabError, ValueError):
    """MODCOD table is empty or not strictly increasing"""

    code = "MODCOD_TABLE_ERROR"
