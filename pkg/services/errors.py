from typing import Any, Optional


class LocalPRError(Exception):
    """Base class for every error raised by the clustering services."""


class InvalidParametersError(LocalPRError, ValueError):
    pass


class GraphFormatError(LocalPRError):
    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class EmptyGraphError(GraphFormatError):
    def __init__(self, message: str = "edge list contains no edges"):
        super().__init__(message)


class DegenerateSetError(LocalPRError):
    pass


class DenseGraphTooLargeError(LocalPRError):
    pass


class EmptyVectorError(LocalPRError):
    pass


class OutOfPathRangeError(LocalPRError):
    pass


class LocalityBudgetExceeded(LocalPRError):
    """Raised when a solver touches more nodes than allowed; keeps the partial iterate."""

    def __init__(self, max_touch: int, partial: Any, stats: Any = None):
        self.max_touch = max_touch
        self.partial = partial
        self.stats = stats
        super().__init__(f"solver touched more than {max_touch} nodes")
