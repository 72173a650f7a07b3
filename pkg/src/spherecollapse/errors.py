"""Exception types shared across the package."""


class SphereCollapseError(Exception):
    """Base class for numerical failures (CLI exit code 3)."""


class GridMismatch(SphereCollapseError, ValueError):
    pass


class SolvabilityViolation(SphereCollapseError):
    """A right-hand side is not orthogonal to the operator kernel."""


class SingularSystem(SphereCollapseError):
    pass


class DegenerateStage(SphereCollapseError):
    pass


class AffineDegenerate(SphereCollapseError):
    pass


class UnderResolved(SphereCollapseError):
    def __init__(self, message: str, reached_time: float | None = None):
        super().__init__(message)
        self.reached_time = reached_time


class MissingData(SphereCollapseError):
    """Lower-stage data or an upstream output file is absent."""


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


class NumericalFailure(SphereCollapseError):
    """Non-finite values appeared during a computation."""


class BoundaryViolation(SphereCollapseError, ValueError):
    """A reduced field does not vanish at r = 0."""
