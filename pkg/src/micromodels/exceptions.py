"""Exception hierarchy shared by every module."""


class MicromodelError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(MicromodelError, ValueError):
    """Input data violates a documented invariant."""


class ParseError(MicromodelError, ValueError):
    """A file line or query string could not be parsed.

    ``line`` and ``column`` are 1-based; either may be None when unknown.
    """

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} (at {', '.join(where)})"
        super().__init__(message)


class ConfigurationError(MicromodelError, ValueError):
    pass


class ProviderError(MicromodelError):
    """Embedding provider failure.

    ``batch_index`` locates the failing request; ``item_index`` the failing
    vector inside it, when the failure is item-specific.
    """

    def __init__(self, message, batch_index=None, item_index=None):
        self.batch_index = batch_index
        self.item_index = item_index
        super().__init__(message)


class TrainingError(MicromodelError):
    pass


class IntegrityError(MicromodelError):
    """Frozen-registry audit failed."""


class UnknownInstanceError(MicromodelError, KeyError):
    pass


class StateError(MicromodelError):
    pass


class MetricError(MicromodelError, ValueError):
    pass


class QueryEvaluationError(MicromodelError):
    """A lexical query referenced a lexicon or category that is not available."""
