"""Exception types shared across the toolkit."""


class PsbaError(Exception):
    """Base class for all toolkit errors."""


class InvalidDimensionError(PsbaError, ValueError):
    """A dimension or shape argument is out of range."""


class ShapeMismatchError(PsbaError, ValueError):
    """Two arrays that must share a shape do not."""


class DegenerateVectorError(PsbaError, ValueError):
    """A vector that must be nonzero (or a basis that must be orthonormal) is not."""


class RankError(PsbaError, ValueError):
    """Requested more components than the data supports.

    Carries the achievable rank so callers can retry with a smaller k.
    """

    def __init__(self, message: str, achievable_rank: int):
        super().__init__(message)
        self.achievable_rank = achievable_rank


class BudgetExhaustedError(PsbaError, RuntimeError):
    """An oracle query would exceed the configured budget.

    The oracle's counter is frozen at the budget; ``queries_used`` reports it.
    """

    def __init__(self, message: str, queries_used: int):
        super().__init__(message)
        self.queries_used = queries_used


class PartialEstimateError(PsbaError, RuntimeError):
    """Gradient estimation aborted mid-batch.

    ``consumed`` is the number of oracle queries this estimate issued before
    the failure, so callers can keep their query ledgers exact.
    """

    def __init__(self, message: str, consumed: int):
        super().__init__(message)
        self.consumed = consumed


class InvalidEndpointsError(PsbaError, ValueError):
    """Binary search endpoints do not straddle the decision boundary."""


class NoValidPairsError(PsbaError, ValueError):
    """Every (source, target) pair given to the scale search was unusable."""


class TransportError(PsbaError, RuntimeError):
    """Remote oracle could not reach the service after bounded retries."""


class DesyncError(PsbaError, RuntimeError):
    """Local and remote query counters disagree; accounting is corrupt."""


class ConfigError(PsbaError, ValueError):
    """Experiment configuration failed validation."""
