"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input violates a documented precondition."""


class NumericalFailureError(RuntimeError):
    """A numerical procedure could not reach its guaranteed state."""


class EmptyAggregateError(RuntimeError):
    """Every trial at a sweep point was flagged; nothing to aggregate."""
