"""Discrete functions on a mesh: coefficients, nodal fields, boundary traces, dipole sources."""

from dataclasses import dataclass, field

import numpy as np
from models.mesh import PointLocation
from numpy.typing import NDArray
from pydantic import ConfigDict, model_validator
from pydantic.dataclasses import dataclass as pydantic_dataclass
from utils.errors import CoefficientError, ControlError

ARRAY_CONFIG = ConfigDict(arbitrary_types_allowed=True)


@pydantic_dataclass(frozen=True, config=ARRAY_CONFIG)
class Coefficient:
    """Piecewise-constant diffusion coefficient, one value per triangle.

    A ``signed`` coefficient (the homotopy velocity gamma - gamma0) may take any sign; otherwise the values
    must be positive and inside [lower_bound, upper_bound].
    """

    per_element_values: NDArray[np.float64]
    lower_bound: float
    upper_bound: float
    signed: bool = False
    description: str = field(default="", compare=False)

    @model_validator(mode="after")
    def check_values(self):
        values = self.per_element_values
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise CoefficientError("Coefficient values must be a finite vector")
        if not self.signed and self.lower_bound <= 0.0:
            raise CoefficientError(f"Lower bound must be positive, got {self.lower_bound}")
        outside = np.flatnonzero((values < self.lower_bound) | (values > self.upper_bound))
        if outside.size:
            k = int(outside[0])
            raise CoefficientError(
                f"Element {k} has value {values[k]!r} outside [{self.lower_bound}, {self.upper_bound}]"
            )
        return self

    @property
    def triangle_count(self) -> int:
        return int(self.per_element_values.shape[0])

    @property
    def is_zero(self) -> bool:
        return not np.any(self.per_element_values)


@dataclass(frozen=True)
class Field:
    """Nodal values of a P1 function."""

    nodal_values: NDArray[np.float64]


@dataclass(frozen=True)
class BoundaryTrace:
    """Values on the boundary nodes, in boundary-loop order."""

    values: NDArray[np.float64]

    def __add__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        return BoundaryTrace(self.values + other.values)

    def __sub__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        return BoundaryTrace(self.values - other.values)

    def scaled(self, factor: float) -> "BoundaryTrace":
        return BoundaryTrace(factor * self.values)

    @classmethod
    def zeros(cls, size: int) -> "BoundaryTrace":
        return cls(np.zeros(size))


@pydantic_dataclass(frozen=True, config=ARRAY_CONFIG)
class DipoleSpec:
    """Point x_hat and direction y of the source y . grad(delta at x_hat)."""

    point: PointLocation
    direction: NDArray[np.float64]

    @model_validator(mode="after")
    def check_direction(self):
        if self.direction.shape != (2,) or not np.all(np.isfinite(self.direction)):
            raise ControlError(f"Dipole direction must be a finite 2D vector, got {self.direction!r}")
        return self
