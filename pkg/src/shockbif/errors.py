"""Exception hierarchy. Each stage has its own class so the CLI can map
failures onto distinct exit codes."""


class PipelineError(Exception):
    """Base class for all failures raised by the pipeline."""

    stage = "pipeline"
    exit_code = 1


class ConfigError(PipelineError, ValueError):
    stage = "config"
    exit_code = 2


class ModelError(PipelineError):
    stage = "model"
    exit_code = 3


class HyperbolicityError(ModelError):
    """Endstate matrix has complex, repeated or zero eigenvalues."""


class LaxViolation(ModelError):
    """Stable/unstable dimension count differs from n + 1."""


class RankineHugoniotError(ModelError):
    """Endstates cannot be joined by a traveling wave."""


class ConvergenceError(ModelError):
    """Newton or Picard iteration failed to converge."""


class SpectralError(PipelineError):
    stage = "spectral"
    exit_code = 4


class NearSpectrumError(SpectralError):
    """Shift lies (numerically) on the spectrum of the operator."""

    def __init__(self, message, shift=None, pivot_ratio=None):
        super().__init__(message)
        self.shift = shift
        self.pivot_ratio = pivot_ratio


class SimplicityError(SpectralError):
    """Contour encloses zero or several eigenvalues where one is required."""


class TrackingError(SpectralError):
    """Tracked eigenvalue left its contour or never crossed."""


class ReductionError(PipelineError):
    stage = "reduction"
    exit_code = 5


class ContractionError(ReductionError):
    """Fixed-point map is not contracting at the requested amplitude."""

    def __init__(self, message, ratio=None):
        super().__init__(message)
        self.ratio = ratio


class BifurcationError(PipelineError):
    stage = "bifurcation"
    exit_code = 6
