"""Exception types shared across the toolkit.

Every failure mode that a caller is expected to branch on gets its own class;
plain ValueError is reserved for malformed arguments.
"""


class Error(Exception):
    """Base class for all toolkit errors."""


class InfiniteMoment(Error):
    """The requested exponential moment of the delay measure diverges.

    Certificates depending on the moment must be treated as failed.
    """


class IncompatibleGrids(Error):
    """Two segments do not share (r, h, length, dimension)."""


class Kappa2NotContractive(Error):
    """kappa2 >= 1: the drift-feedback formula for f is undefined."""


class EigensolverFailure(Error):
    """Dense nonsymmetric eigensolver did not converge."""


class EmptyGroup(Error):
    """A partition group contains no state."""


class NonFiniteState(Error):
    """Operation requires an explicitly finite (or truncated) state space."""


class SingularSystem(Error):
    """Linear system of the M-matrix certificate is singular."""


class FixedPointDiverged(Error):
    """Neutral-term fixed point failed to converge; path aborted."""

    def __init__(self, message, t=None, path_index=None):
        super().__init__(message)
        self.t = t
        self.path_index = path_index


class NonFiniteValue(Error):
    """NaN/inf appeared in a simulated path; aborted at the offending time."""

    def __init__(self, message, t=None, path_index=None):
        super().__init__(message)
        self.t = t
        self.path_index = path_index


class NonpositiveMean(Error):
    """Decay fit window contains a nonpositive mean; shrink the window."""


class SizeLimit(Error):
    """Problem too large for the exact solver path."""


class ConfigError(Error):
    """Config validation failure; message is 'path.to.field: problem'."""
