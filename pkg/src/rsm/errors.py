"""Exception types shared across the package."""


class RsmError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(RsmError):
    """Dimension or arity mismatch between arguments."""


class NoUniqueStationary(RsmError):
    """The chain does not admit a unique stationary distribution."""


class SingularFundamental(RsmError):
    """The fundamental-matrix system is singular or too ill-conditioned."""


class ContextTooSmall(RsmError):
    """A context must contain at least two items."""


class DanglingItem(RsmError):
    """Restriction left an item with no outgoing transition mass."""


class GridBudgetExceeded(RsmError):
    """The grid enumeration would exceed the configured point cap."""

    def __init__(self, message, required=None, cap=None):
        super().__init__(message)
        self.required = required
        self.cap = cap


class SchemaError(RsmError):
    """A dataset file does not match the expected column schema."""


class ParseError(RsmError):
    """A dataset line could not be parsed."""

    def __init__(self, message, line_number=None):
        super().__init__(message)
        self.line_number = line_number


class SplitTooSmall(RsmError):
    """Not enough flip pairs to produce a train/test split."""


class DegenerateVariance(RsmError):
    """Paired differences are constant and nonzero; the t statistic is undefined."""
