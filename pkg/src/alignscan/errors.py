"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes of the operands are incompatible with the requested operation."""


class ParameterError(ValueError):
    """A configuration value or argument is outside its legal range."""


class DegenerateInputError(ValueError):
    """An input row is numerically degenerate (e.g. zero norm) and cannot be used."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class FormatError(ValueError):
    """A serialized file does not conform to its binary or text format."""


class TrainingError(RuntimeError):
    """Training diverged or otherwise failed; message carries epoch and step."""


class BudgetError(MemoryError):
    """A benchmark run would exceed the configured allocation budget."""
