"""Exception hierarchy.

Each error class carries the process exit code the CLI maps it to.
"""


class TnaifError(Exception):
    exit_code = 1


class ShapeError(TnaifError, ValueError):
    """Tensor dimensions do not line up for the requested operation."""


class AxisError(TnaifError, IndexError):
    pass


class DecodeError(TnaifError, ValueError):
    pass


class ParseError(TnaifError, ValueError):
    exit_code = 2


class QueryError(TnaifError, ValueError):
    pass


class DegenerateModelError(TnaifError, ArithmeticError):
    """The model's partition function is zero or not finite."""

    exit_code = 6


class NumericError(TnaifError, ArithmeticError):
    exit_code = 6


class SupportError(TnaifError, ValueError):
    """A training trajectory has zero amplitude under the model."""

    exit_code = 4


class ConditioningError(TnaifError, ValueError):
    """Conditioning on an event of zero probability."""

    exit_code = 5


class DivergenceError(TnaifError, ValueError):
    pass


class EpisodeOverError(TnaifError, RuntimeError):
    pass


IO_EXIT_CODE = 3
