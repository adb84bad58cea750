"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ScalocastError(Exception):
    exit_code = 1


class ConfigError(ScalocastError, ValueError):
    """Invalid parameters or configuration."""

    exit_code = 2


class DataError(ScalocastError, ValueError):
    """Malformed, missing or insufficient input data."""

    exit_code = 3


class EmptyInputError(DataError):
    pass


class ShapeError(DataError):
    pass


class ContractError(DataError):
    """A sample or channel layout does not match what a model expects."""


class UndefinedStatisticError(DataError):
    """A statistic is undefined for the given input (constant data, all-zero differences)."""


class NumericError(ScalocastError, ArithmeticError):
    """Non-finite values during training or inference."""

    exit_code = 4
