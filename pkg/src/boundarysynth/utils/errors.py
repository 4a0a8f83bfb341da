"""Exception hierarchy shared by all services."""

from typing import TYPE_CHECKING, Any, Optional

if TYPE_CHECKING:
    from models.homotopy import HomotopyState, Trajectory
    from models.linalg import SolveReport


class SynthesisError(Exception):
    """Base class for every error raised by the package."""


class MeshError(SynthesisError):
    """Invalid mesh parameters or point queries."""


class SolverError(SynthesisError):
    """A linear solve failed; carries the solver report when one exists."""

    def __init__(self, message: str, report: Optional["SolveReport"] = None) -> None:
        super().__init__(message)
        self.report = report


class CoefficientError(SynthesisError):
    """Coefficient outside its declared bounds or defined on another mesh."""


class ControlError(SynthesisError):
    """The control functional cannot be evaluated (degenerate or dependent fluxes)."""


class CriticalPointError(ControlError):
    """The protected gradient vanished at a constrained point."""


class IntegrationError(SynthesisError):
    """The homotopy integration stopped early; carries the partial trajectory."""

    def __init__(
        self,
        message: str,
        trajectory: Optional["Trajectory"] = None,
        state: Optional["HomotopyState"] = None,
        partial: Any = None,
    ) -> None:
        super().__init__(message)
        self.trajectory = trajectory
        self.state = state
        self.partial = partial


class StepUnderflowError(IntegrationError):
    """The monotonicity guard halved the step below the configured minimum."""


class ConfigError(SynthesisError):
    """Run configuration could not be parsed or validated."""

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None) -> None:
        location = []
        if line is not None:
            location.append(f"line {line}")
        if key is not None:
            location.append(f"key '{key}'")
        super().__init__(f"{message} ({', '.join(location)})" if location else message)
        self.line = line
        self.key = key
