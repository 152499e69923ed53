"""Exception types shared across the package."""


class CoexecError(Exception):
    """Base class for all package-specific errors."""


class ParseError(CoexecError):
    """Raised when an input file is not syntactically valid."""


class ValidationError(CoexecError):
    """Raised when a value violates a documented invariant."""


class UnknownPreset(CoexecError):
    """Raised for an unrecognised workload preset name."""


class InvalidArgument(CoexecError):
    """Raised for out-of-range or inconsistent arguments."""


class IndivisibleOperator(CoexecError):
    """Raised when a split decision targets an operator that cannot be split."""


class InsufficientData(CoexecError):
    """Raised when a training set is too small to fit a model."""


class EmptyEpisodes(CoexecError):
    """Raised when recurrent training receives no episodes."""


class NonPositiveCost(CoexecError):
    """Raised when an observation carries a non-positive latency or energy."""


class InvalidStartIndex(CoexecError):
    """Raised when a plan is requested from an out-of-range operator index."""


class CostCallbackFailure(CoexecError):
    """Raised when the planner's cost callback fails; carries the operator id."""

    def __init__(self, op_id: int, cause: BaseException):
        super().__init__(f"cost callback failed at op {op_id}: {cause!r}")
        self.op_id = op_id
        self.cause = cause


class SearchSpaceTooLarge(CoexecError):
    """Raised when exhaustive enumeration would exceed the safety guard."""
