"""Exception types raised across the package."""


class PerwaveError(RuntimeError):
    """Base class for numerical failures reported by this package."""


class ConvergenceError(PerwaveError):
    pass


class ProfileError(PerwaveError):
    pass


class ContinuationError(PerwaveError):
    pass


class ClusterError(PerwaveError):
    """The zero eigenvalue group cannot be separated from the rest of the spectrum."""


class BranchMatchingError(PerwaveError):
    pass


class GateError(PerwaveError):
    """A gated check was requested on a wave that fails the spectral gate."""


class BlowUpError(PerwaveError):
    pass


class ExtractionError(PerwaveError):
    pass


class ConfigError(ValueError):
    pass
