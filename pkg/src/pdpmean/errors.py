"""Exception hierarchy.

Every error raised by the library derives from :class:`PDPError`. Errors that
signal a violated precondition also derive from :class:`ValueError` so callers
using the usual idiom keep working.
"""


class PDPError(Exception):
    """Base class for all library errors.

    ``operation`` names the public operation that failed; the CLI reports it.
    """

    def __init__(self, message: str = "", operation: str | None = None):
        super().__init__(message)
        self.operation = operation


class PreconditionError(PDPError, ValueError):
    pass


class NonPositiveScale(PreconditionError):
    pass


class OutOfRange(PreconditionError):
    pass


class InvertedRange(PreconditionError):
    pass


class EmptyInput(PreconditionError):
    pass


class LengthMismatch(PreconditionError):
    pass


class EmptyBudgets(PreconditionError):
    pass


class NonPositiveBudget(PreconditionError):
    pass


class NonPositiveWidth(PreconditionError):
    pass


class BudgetOutOfRange(PreconditionError):
    pass


class InvalidBounds(PreconditionError):
    pass


class BudgetOutsideDomain(PreconditionError):
    pass


class InconsistentParams(PreconditionError):
    pass


class ScaleTooLarge(PreconditionError):
    pass


class TooFewElements(PreconditionError):
    pass


class ScanExhausted(PDPError):
    """An SVT scan evaluated ``max_steps`` queries without a crossing."""


class InsufficientData(PDPError):
    pass


class RateOverflow(PDPError):
    pass


class BudgetOverflow(PDPError):
    pass


class GridTooLarge(PDPError):
    pass


class EmptyShrunk(PDPError):
    pass


class DegenerateBinning(PDPError):
    pass


class ConfigError(PDPError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}", operation="config")
        self.field = field
