class OffensevalError(Exception):
    """Base class for every error raised by the pipeline."""

    exit_code = 1


class ConfigError(OffensevalError, ValueError):
    """Invalid configuration or command-line usage."""

    exit_code = 1


class DataFormatError(OffensevalError, ValueError):
    """Malformed or missing input data, checkpoints or label files."""

    exit_code = 2


class NumericError(OffensevalError, ArithmeticError):
    """Non-finite values or degenerate training data."""

    exit_code = 3
