"""Exception hierarchy shared by the library and the command line front end."""


class BettaError(Exception):
    """Base class for all data and model errors raised by this package."""


class ParseError(BettaError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class EstimationError(BettaError):
    """A richness estimator could not produce a usable estimate."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class ModelError(BettaError):
    """Invalid model specification (rank deficiency, id mismatch, too few samples)."""
