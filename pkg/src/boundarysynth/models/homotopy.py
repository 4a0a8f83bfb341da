"""Integrator options and the trajectory it produces."""

from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np
from models.control import Branch
from models.fields import BoundaryTrace
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator


class IntegratorOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    method: Literal["euler", "rk4"] = Field("euler", description="Predictor for ds f = F(f, s)")
    initial_step: float = Field(1.0 / 64.0, gt=0.0, le=1.0, description="First and largest step in s")
    min_step: float = Field(1e-6, gt=0.0, description="Step below which the integrator gives up")
    slack_tolerance: float = Field(
        1e-6, ge=0.0, description="Allowed decrease of the protected value between accepted states"
    )
    corrector: bool = Field(
        True,
        description="Restore the protected value at fixed s after each predictor step; euler needs it for the "
        "multi_point and multilinear kinds",
    )
    corrector_iterations: int = Field(3, ge=1, description="Newton iterations for multilinear corrections")
    checkpoints: Tuple[float, ...] = Field((0.5,), description="s-values the integrator never steps over")

    @model_validator(mode="after")
    def check_steps(self):
        if self.min_step > self.initial_step:
            raise ValueError(f"min_step {self.min_step} exceeds initial_step {self.initial_step}")
        if any(not 0.0 < c < 1.0 for c in self.checkpoints):
            raise ValueError(f"checkpoints must lie strictly inside (0, 1), got {self.checkpoints}")
        return self


@dataclass(frozen=True)
class HomotopyState:
    """One accepted point of the trajectory.

    ``f`` holds one row per solution (shape (m, boundary_count)); ``point_values`` the per-point parts of
    ``constraint_value`` (gradient norms, or the single multilinear value).
    """

    s: float
    f: NDArray[np.float64]
    constraint_value: float
    point_values: NDArray[np.float64]
    mu: float
    g_norm: float
    step_size: float
    branch: Branch
    correction_norm: float = 0.0

    @property
    def traces(self) -> List[BoundaryTrace]:
        return [BoundaryTrace(row) for row in self.f]


@dataclass
class Trajectory:
    states: List[HomotopyState] = field(default_factory=list)
    accepted_steps: int = 0
    rejected_steps: int = 0

    @property
    def final_f(self) -> List[BoundaryTrace]:
        return self.states[-1].traces if self.states else []

    @property
    def last(self) -> Optional[HomotopyState]:
        return self.states[-1] if self.states else None

    def state_at(self, s: float) -> Optional[HomotopyState]:
        return next((state for state in self.states if state.s == s), None)

    @property
    def is_complete(self) -> bool:
        return bool(self.states) and self.states[-1].s == 1.0


class FinalVerification(BaseModel):
    """Result of re-solving at s = 1 from scratch."""

    constraint_value: float = Field(..., description="Protected value recomputed with a fresh assembly")
    point_values: List[float] = Field(..., description="Per-point parts of the protected value")
    threshold: float = Field(..., description="Required lower bound")
    slack_tolerance: float = Field(..., description="Allowed shortfall below the threshold")
    passed: bool = Field(..., description="constraint_value >= threshold - slack_tolerance")


@dataclass(frozen=True)
class NaiveSample:
    """One row of the scaling baseline f_s = phi(s) f0."""

    s: float
    phi: float
    phi_prime: float
