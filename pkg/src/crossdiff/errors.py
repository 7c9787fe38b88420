"""Exception types shared across the solver modules."""


class CrossDiffError(Exception):
    """Base class for solver failures."""


class MeshMismatch(CrossDiffError, ValueError):
    pass


class FixedPointDivergence(CrossDiffError):
    def __init__(self, message: str, residual: float, step: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class SingularSystem(CrossDiffError):
    def __init__(self, message: str, pivot: int | None = None, step: int | None = None):
        super().__init__(message)
        self.pivot = pivot
        self.step = step


class NoSteadyState(CrossDiffError):
    pass


class ConfigError(ValueError):
    """Invalid or unparsable run configuration; ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
