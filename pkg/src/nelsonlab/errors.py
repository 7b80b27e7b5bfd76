"""Exception types shared across the package."""


class NelsonLabError(Exception):
    """Base class for all package errors."""


class ParameterError(NelsonLabError):
    """Invalid numeric parameter (non-positive dt, bad counts, ...)."""


class AliasingError(ParameterError):
    """Time step too coarse to resolve the requested spectral cutoff."""


class UnsupportedSpectrumError(NelsonLabError):
    """Spectrum kind not usable by the requested operation."""


class IntegrationDivergedError(NelsonLabError):
    """State became NaN/inf during integration."""

    def __init__(self, step, trajectory=None):
        self.step = step
        self.trajectory = trajectory
        where = f"step {step}"
        if trajectory is not None:
            where += f", trajectory {trajectory}"
        super().__init__(f"integration diverged at {where}")


class GridError(NelsonLabError):
    """Requested time does not lie on the stored grid."""


class DomainError(NelsonLabError):
    """Coordinate outside the admissible region."""


class NoMotionError(DomainError):
    """Energy at or below the bottom of the well: no classical orbit."""


class ForbiddenRegionError(DomainError):
    """Point is classically forbidden for the given energy."""


class DegenerateNoiseError(NelsonLabError):
    """Induced noise amplitude vanishes; no scale choice possible."""


class QuadratureError(NelsonLabError):
    """Quadrature failed to converge or integrand is not integrable."""


class ConfigError(NelsonLabError):
    """Experiment configuration failed validation."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"config field '{field}': {message}")
