"""Exception types raised across the package."""


class GpStitchError(Exception):
    """Base class for all package-specific errors."""


class NotDecomposableError(GpStitchError):
    """The graph is not decomposable (chordal) and the operation requires it."""


class CycleDetectedError(GpStitchError):
    """A directed graph supplied for moralization contains a cycle."""


class NotPositiveDefiniteError(GpStitchError):
    """A matrix required to be positive definite failed factorization."""


class InvalidCrossSpecError(GpStitchError):
    """Cross-covariance parameters violate the validity conditions."""


class MissingEdgeParameterError(GpStitchError):
    """A cross parameter b_ij is required for an edge but was not supplied."""


class DimensionMismatchError(GpStitchError):
    """Array shapes are inconsistent with the model dimensions."""


class DegenerateMismatchError(GpStitchError):
    """A value at a degenerate (zero-variance) point disagrees with the
    conditioning value."""


class MisalignedDataError(GpStitchError):
    """The operation requires every variable to be observed at the same
    locations."""


class NoConvergenceError(GpStitchError):
    """An iterative routine exhausted its budget without reaching tolerance."""


class InsufficientReplicatesError(GpStitchError):
    """Too few Monte Carlo replicates for the requested test."""


class EmptyChainError(GpStitchError):
    """An MCMC run was configured to retain zero draws."""


class NoLegalMoveError(GpStitchError):
    """No legal graph move exists from the current state."""


class PriorMisconfiguredError(GpStitchError):
    """A prior specification is inconsistent with the model."""


class ConfigError(GpStitchError):
    """A run configuration file or CLI argument is invalid."""


class ParseError(GpStitchError):
    """A data file could not be parsed; message carries the line number."""
