"""Structured exceptions and warnings shared across the package."""


class ShecltError(Exception):
    """Base class for all package errors."""


class DalangViolation(ShecltError):
    """The spectral integral diverges for the given covariance kind and dimension."""


class SolverBlowup(ShecltError):
    """A field value exceeded the blow-up guard during time stepping."""

    def __init__(self, message, step=None, replica=None):
        super().__init__(message)
        self.step = step
        self.replica = replica


class NonConvergence(ShecltError):
    """Successive fixed-point iterates stopped contracting."""


class SupportOverflow(ShecltError):
    """A scaled test-function support does not fit the grid domain plus halo."""


class CutoffTooSmall(ShecltError):
    """Covariance truncation cutoff leaves a non-negligible boundary contribution."""


class ConditionNotApplicable(ShecltError):
    """The diffusion coefficient does not satisfy a structural precondition."""


class DegenerateVariance(ShecltError):
    """A reference variance is zero or negative."""


class ResolutionTooCoarse(ShecltError):
    """A function-class sampler is too coarse for the requested radii."""


class ConfigError(ShecltError):
    """Invalid configuration value; the message names the offending key."""


class SynthesisWarning(UserWarning):
    """Spectral synthesis clipped a non-trivial amount of negative weight mass."""


class CovarianceNotPSD(UserWarning):
    """A metric did not embed exactly; the nearest PSD correction was used."""
