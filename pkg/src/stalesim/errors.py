"""Exception hierarchy shared by all stalesim modules."""


class StalesimError(Exception):
    """Base class for every error raised by stalesim."""


class ConfigError(StalesimError):
    pass


class NonFiniteError(StalesimError, ArithmeticError):
    """A parameter, update or metric became NaN or infinite."""

    def __init__(self, message, *, iteration=None, worker=None):
        self.iteration = iteration
        self.worker = worker
        context = []
        if iteration is not None:
            context.append(f"iteration={iteration}")
        if worker is not None:
            context.append(f"worker={worker}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class InfeasibleMean(StalesimError, ValueError):
    """Stragglers alone already exceed the requested mean delay."""


class UnsupportedOptimizer(StalesimError, TypeError):
    pass


class FormatError(StalesimError, ValueError):
    """Malformed dataset file; ``position`` is a byte offset or 1-based line number."""

    def __init__(self, message, *, path=None, position=None):
        self.path = path
        self.position = position
        where = []
        if path is not None:
            where.append(str(path))
        if position is not None:
            where.append(f"at {position}")
        if where:
            message = f"{message} [{' '.join(where)}]"
        super().__init__(message)


class MissingFile(StalesimError, FileNotFoundError):
    pass


class ZeroVector(StalesimError, ValueError):
    pass


class InsufficientHistory(StalesimError, LookupError):
    pass


class MissingProbes(StalesimError, LookupError):
    pass


class UnknownMetric(StalesimError, KeyError):
    pass


class MissingBaseline(StalesimError, LookupError):
    pass
