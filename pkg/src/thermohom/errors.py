"""Exception hierarchy shared by all modules."""


class ThermohomError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(ThermohomError, ValueError):
    """An input parameter violates a standing assumption."""


class AlignmentError(ParameterError):
    """Hole boundaries are not resolved by the micro grid."""


class GeometryError(ThermohomError):
    """Inadmissible cell geometry (disconnected or touching the cell boundary)."""


class AssemblyError(ThermohomError):
    """Coefficient data rejected during matrix assembly."""


class SolverError(ThermohomError):
    """Iterative solver failed to reach the requested tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class PairingError(ThermohomError):
    """Microscale and limit trajectories cannot be compared."""


class FitError(ThermohomError):
    """Too few usable points for a rate fit."""


class RunError(ThermohomError):
    """A time integration run failed."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(ParameterError):
    """Malformed or inconsistent run configuration."""


class StageError(ThermohomError):
    """A stage of the convergence study failed."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
