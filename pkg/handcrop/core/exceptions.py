"""
Numerical failure types for handcrop.

Parameter and contract violations are reported with Django's
``ValidationError`` (see ``validators``); the classes here cover failures that
happen while computing on otherwise valid inputs.
"""
from typing import Optional


class NumericalError(Exception):
    """
    Base class for numerical failures.

    Attributes:
        module: Name of the handcrop module that raised the error.
    """

    module = "core"

    def __init__(self, message: str, module: Optional[str] = None):
        super().__init__(message)
        if module is not None:
            self.module = module

    def as_dict(self) -> dict:
        """Return a JSON-serializable description of the failure."""
        return {"error": str(self), "type": type(self).__name__, "module": self.module}


class BehindCameraError(NumericalError):
    """A point has non-positive depth and cannot be projected."""

    module = "camera"

    def __init__(self, index: int, depth: float, module: Optional[str] = None):
        self.index = int(index)
        self.depth = float(depth)
        super().__init__(
            f"Point {self.index} is behind the camera (Z = {self.depth:.6g} mm).",
            module=module,
        )

    def as_dict(self) -> dict:
        payload = super().as_dict()
        payload["index"] = self.index
        return payload


class DegenerateConfigurationError(NumericalError):
    """The correspondences do not determine a pose (rank-deficient system)."""

    module = "alignment"


class InfeasibleSolutionError(NumericalError):
    """The solver converged to a pose that places points behind the camera."""

    module = "alignment"


class FrameError(NumericalError):
    """A root frame cannot be built because its construction joints are collinear."""

    module = "metrics"


class RenderError(NumericalError):
    """The soft rasterizer cannot render the given geometry."""

    module = "softras"


class FitError(NumericalError):
    """
    Silhouette fitting left the valid region.

    Attributes:
        params: Last parameters that rendered successfully.
        losses: Loss trajectory up to the failure.
        step_sizes: Accepted step sizes up to the failure.
    """

    module = "softras"

    def __init__(self, message: str, params=None, losses=None, step_sizes=None):
        super().__init__(message)
        self.params = params
        self.losses = list(losses or [])
        self.step_sizes = list(step_sizes or [])


class CheckFailedError(NumericalError):
    """An experiment's ``--check`` assertion did not hold."""

    module = "cli"
