"""Exception types shared across the package."""


class EvFusionError(Exception):
    """Base class for all package errors."""


class ContractError(EvFusionError):
    """A caller violated a documented precondition."""


class DimensionError(ContractError):
    """Tensor shapes are incompatible for the requested operation."""


class NumericError(EvFusionError):
    """Non-finite values where finite ones are required."""


class ParseError(EvFusionError):
    """Malformed input file."""


class ValidationError(EvFusionError):
    """Well-formed input whose values violate declared constraints."""


class ConfigError(EvFusionError):
    """Invalid run configuration."""
