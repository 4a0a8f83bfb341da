from typing import Annotated, List, Literal, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator


class _CoefficientBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    declared_bounds: Tuple[float, float] = Field(
        (1e-3, 1e3), description="Bounds (c, C) the evaluated values must respect, with c > 0"
    )

    @model_validator(mode="after")
    def check_bounds(self):
        c, C = self.declared_bounds
        if not 0.0 < c <= C:
            raise ValueError(f"declared_bounds must satisfy 0 < c <= C, got {self.declared_bounds}")
        return self

    def values_at(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


class ConstantCoefficient(_CoefficientBase):
    kind: Literal["constant"] = "constant"
    value: float = Field(1.0, description="Constant value")

    def values_at(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.full(points.shape[0], self.value)

    def describe(self) -> str:
        return f"constant({self.value:g})"


class Bump(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    amplitude: float = Field(..., description="Peak height added to the base value")
    center: Tuple[float, float] = Field(..., description="Bump center")
    width_sq: float = Field(..., gt=0.0, description="Squared width: exp(-|x-center|^2 / width_sq)")


class GaussianBumpsCoefficient(_CoefficientBase):
    kind: Literal["gaussian_bumps"] = "gaussian_bumps"
    base: float = Field(1.0, description="Background value")
    bumps: List[Bump] = Field(default_factory=list, description="Gaussian bumps added to the base")

    def values_at(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        values = np.full(points.shape[0], self.base)
        for bump in self.bumps:
            r2 = np.sum((points - np.asarray(bump.center)) ** 2, axis=1)
            values += bump.amplitude * np.exp(-r2 / bump.width_sq)
        return values

    def describe(self) -> str:
        terms = [f"{b.amplitude:g}*exp(-|x-({b.center[0]:g},{b.center[1]:g})|^2/{b.width_sq:g})" for b in self.bumps]
        return " + ".join([f"{self.base:g}", *terms])


class SinusoidalCoefficient(_CoefficientBase):
    kind: Literal["sinusoidal"] = "sinusoidal"
    base: float = Field(1.0, description="Mean value")
    amplitude: float = Field(0.25, description="Oscillation amplitude")
    frequencies: Tuple[float, float] = Field((1.0, 1.0), description="Wave numbers (k1, k2)")
    phase: float = Field(0.0, description="Phase offset in radians")

    def values_at(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        k = np.asarray(self.frequencies)
        return self.base + self.amplitude * np.cos(2.0 * np.pi * points @ k + self.phase)

    def describe(self) -> str:
        k1, k2 = self.frequencies
        return f"{self.base:g} + {self.amplitude:g}*cos(2pi({k1:g}x1+{k2:g}x2)+{self.phase:g})"


class PiecewiseSmoothstepCoefficient(_CoefficientBase):
    kind: Literal["piecewise_smoothstep"] = "piecewise_smoothstep"
    inside: float = Field(2.0, description="Value inside the disk")
    outside: float = Field(1.0, description="Value outside the disk")
    center: Tuple[float, float] = Field((0.5, 0.5), description="Disk center")
    radius: float = Field(0.25, gt=0.0, description="Disk radius")
    transition: float = Field(0.1, gt=0.0, description="Width of the smoothstep ramp across the radius")

    def values_at(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        r = np.linalg.norm(points - np.asarray(self.center), axis=1)
        t = np.clip((r - (self.radius - 0.5 * self.transition)) / self.transition, 0.0, 1.0)
        return self.inside + (self.outside - self.inside) * t * t * (3.0 - 2.0 * t)

    def describe(self) -> str:
        cx, cy = self.center
        return (
            f"smoothstep(inside={self.inside:g}, outside={self.outside:g}, center=({cx:g},{cy:g}), "
            f"radius={self.radius:g}, transition={self.transition:g})"
        )


CoefficientExpr = Annotated[
    Union[
        ConstantCoefficient,
        GaussianBumpsCoefficient,
        SinusoidalCoefficient,
        PiecewiseSmoothstepCoefficient,
    ],
    Field(discriminator="kind"),
]
