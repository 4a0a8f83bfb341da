"""Constraint descriptions and control functional outputs."""

from dataclasses import dataclass, field
from enum import StrEnum
from typing import List, Optional

import numpy as np
from models.fields import BoundaryTrace
from models.mesh import PointLocation
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic.dataclasses import dataclass as pydantic_dataclass
from utils.errors import ControlError


class ConstraintKind(StrEnum):
    SINGLE_GRADIENT = "single_gradient"
    MULTI_POINT = "multi_point"
    MULTILINEAR = "multilinear"


class Branch(StrEnum):
    INACTIVE = "inactive"
    ACTIVE = "active"


DETERMINANT_2D = np.array([[0.0, 1.0], [-1.0, 0.0]])
FIRST_COMPONENT = np.array([1.0, 0.0])


@pydantic_dataclass(frozen=True, config=ConfigDict(arbitrary_types_allowed=True))
class ConstraintSpec:
    """Which functional of the solution gradients is protected, and where.

    For the multilinear kind ``tensor`` has shape (2,) * num_solutions and
    L(a^1, ..., a^m) = sum tensor[j1, ..., jm] a^1_j1 ... a^m_jm; the 2D determinant of two gradients is
    ``DETERMINANT_2D``.
    """

    kind: ConstraintKind
    points: List[PointLocation]
    threshold: float = 1.0
    mu_clamp: bool = False
    tensor: Optional[NDArray[np.float64]] = None

    @model_validator(mode="after")
    def check_shape(self):
        if not self.points:
            raise ControlError("At least one constrained point is required")
        if self.threshold <= 0.0:
            raise ControlError(f"Threshold must be positive, got {self.threshold}")
        coordinates = [tuple(p.point.tolist()) for p in self.points]
        if len(set(coordinates)) != len(coordinates):
            raise ControlError(f"Constrained points must be pairwise distinct, got {coordinates}")
        if self.kind is ConstraintKind.SINGLE_GRADIENT and len(self.points) != 1:
            raise ControlError("single_gradient protects exactly one point")
        if self.kind is ConstraintKind.MULTILINEAR:
            if self.tensor is None or self.tensor.ndim < 1 or any(d != 2 for d in self.tensor.shape):
                raise ControlError("multilinear constraints need a tensor of shape (2,) * num_solutions")
            if len(self.points) != 1:
                raise ControlError("multilinear constraints are evaluated at one point")
        return self

    @property
    def num_solutions(self) -> int:
        if self.kind is ConstraintKind.MULTILINEAR:
            assert self.tensor is not None
            return int(self.tensor.ndim)
        return 1


@dataclass(frozen=True)
class ControlOutput:
    """Boundary velocity chosen by a control functional, with the quantities that produced it."""

    g: List[BoundaryTrace]
    mu: float
    multipliers: NDArray[np.float64]
    volume_terms: NDArray[np.float64]
    flux_norm_sq: float
    branch: Branch
    fluxes: List[BoundaryTrace] = field(default_factory=list)
    directions: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 2)))
    degenerate: bool = False

    @property
    def trace(self) -> BoundaryTrace:
        return self.g[0]

    @property
    def volume_term(self) -> float:
        return float(np.sum(self.volume_terms))


class ControlRecord(BaseModel):
    """Trajectory-log form of one control evaluation."""

    s: float = Field(..., description="Homotopy parameter")
    mu: float = Field(..., description="Multiplier (first coefficient for multi-point)")
    branch: Branch = Field(..., description="inactive when g = 0")
    volume_term: float = Field(..., description="Summed volume coupling terms")
    flux_norm_sq: float = Field(..., description="Denominator: summed squared flux norms")
    g_l2_norm: float = Field(..., description="L2(boundary) norm of the returned velocity")
