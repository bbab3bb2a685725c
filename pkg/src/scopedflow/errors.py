"""Exception hierarchy shared across the engine."""


class ScopedFlowError(Exception):
    """Base class for all errors raised by this package."""


class ModelViolation(ScopedFlowError):
    """A dataflow model rule was broken by the caller (e.g. stripping an empty tag)."""


class EngineFault(ScopedFlowError):
    """Internal protocol violation: indicates a bug in the engine, not bad input."""


class GraphLoadError(ScopedFlowError):
    """Raised when CSV ingestion fails; message names the offending file and line."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)
        self.path = path
        self.line = line


class RoutingFault(ScopedFlowError):
    """A vertex was looked up in a tablet that does not own it (misrouted message)."""


class QueryError(ScopedFlowError):
    """Invalid query IR or unsupported query construct."""
