"""Exception hierarchy shared by all cvcluster modules."""


class CVClusterError(Exception):
    """Base class for every error raised by this package."""


class InvalidModes(CVClusterError, KeyError):
    pass


class InvalidParameter(CVClusterError, ValueError):
    pass


class NotPure(CVClusterError, ValueError):
    pass


class ResourceLimit(CVClusterError):
    pass


class InvalidPartition(CVClusterError, ValueError):
    pass


class Incomplete(CVClusterError):
    """Raised when a verdict needs neighbouring indices that are not available."""


class AboveThreshold(CVClusterError, ValueError):
    """OPO pumped at or above threshold (xi >= 1)."""


class Degenerate(CVClusterError, ZeroDivisionError):
    pass


class NumericalAccuracy(CVClusterError):
    """A quadrature or fit could not reach the requested accuracy."""


class SingularGate(CVClusterError, ValueError):
    """The requested measurement angles would need infinite squeezing."""


class CompileFailure(CVClusterError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ScheduleError(CVClusterError, ValueError):
    pass


class LedgerError(CVClusterError):
    pass


class FormatError(CVClusterError, ValueError):
    pass


class FitError(CVClusterError):
    pass
