"""Exception types raised across the package."""


class PumapError(Exception):
    """Base class for package errors."""


class ParameterError(PumapError, ValueError):
    """A hyperparameter or argument is outside its valid range."""


class DimensionError(PumapError, ValueError):
    """Array shapes do not line up."""


class ContractError(PumapError, RuntimeError):
    """An object was used out of protocol (e.g. a stale forward cache)."""


class CapabilityError(PumapError, RuntimeError):
    """The model lacks a component needed for the requested operation."""


class NumericError(PumapError, FloatingPointError):
    """A computation produced NaN or Inf."""


class DataError(PumapError, ValueError):
    """An input file could not be parsed."""
