"""Exception hierarchy shared by all modules."""


class AghnSimError(Exception):
    """Base class for every error raised by this package."""


class StructuralError(AghnSimError, ValueError):
    """Shapes, layer counts or layer names do not line up."""


class ConfigurationError(AghnSimError, ValueError):
    """Invalid or infeasible configuration. ``key`` names the offending field."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NumericalDivergenceError(AghnSimError, ArithmeticError):
    """Local training produced a non-finite loss."""

    def __init__(self, message, round_index=None, epoch=None, batch=None, client=None):
        super().__init__(message)
        self.round_index = round_index
        self.epoch = epoch
        self.batch = batch
        self.client = client


class ReportingError(AghnSimError):
    """Requested analytics are not supported by the given snapshots."""
