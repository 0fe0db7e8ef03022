"""Exception hierarchy shared by all modules."""


class RRStatesError(Exception):
    """Base class for every error raised by the package."""


class IngestError(RRStatesError):
    """Raised when a price or sector file cannot be turned into a dense panel."""

    def __init__(self, message, date=None, ticker=None):
        super().__init__(message)
        self.date = date
        self.ticker = ticker


class ConfigError(RRStatesError, ValueError):
    """Invalid parameters or configuration."""


class NumericalError(RRStatesError, ArithmeticError):
    """A numerical routine failed or produced an inconsistent result."""


class DegenerateWindowError(RRStatesError):
    """A window contains an asset with zero return variance."""

    def __init__(self, message, ticker=None, window=None):
        super().__init__(message)
        self.ticker = ticker
        self.window = window


class DegenerateResidualError(RRStatesError):
    """Residual variance of an asset vanished after removing the market mode."""

    def __init__(self, message, asset=None):
        super().__init__(message)
        self.asset = asset


class DegenerateClusteringError(RRStatesError):
    """Fewer distinct points than requested clusters."""
