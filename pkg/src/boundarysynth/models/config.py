"""Run configuration, validated from the nested mapping the dotted-key parser produces."""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from models.coefficient import CoefficientExpr, ConstantCoefficient
from models.control import DETERMINANT_2D, FIRST_COMPONENT, ConstraintKind, ConstraintSpec
from models.homotopy import IntegratorOptions
from models.linalg import SolverOptions
from models.mesh import Mesh
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from services import mesh_service
from utils.errors import ConfigError
from utils.helpers import parse_dotted_config


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class MeshConfig(_Section):
    n_per_side: int = Field(32, ge=2, description="Cells per side of the structured unit-square mesh")


class ConstraintConfig(_Section):
    kind: ConstraintKind = Field(ConstraintKind.SINGLE_GRADIENT, description="Protected functional")
    points: List[Tuple[float, float]] = Field([(0.5, 0.5)], min_length=1, description="Strictly interior points")
    threshold: float = Field(1.0, gt=0.0, description="Lower bound the protected value must keep")
    mu_clamp: bool = Field(False, description="Multilinear only: replace mu by min(0, mu)")
    form: Literal["determinant", "projection", "tensor"] = Field(
        "determinant", description="Multilinear preset; 'tensor' reads constraint.tensor"
    )
    tensor: Optional[List[Any]] = Field(None, description="Nested lists of shape (2,) * num_solutions")
    num_solutions: Optional[int] = Field(None, ge=1, description="Checked against the form when given")
    initial: Optional[List[Literal["x1", "x2"]]] = Field(
        None, description="Initial traces by name; defaults to x1 (and x1, x2, ... for multilinear)"
    )

    @field_validator("points")
    @classmethod
    def check_points(cls, points: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
        for point in points:
            if not mesh_service.is_strictly_interior(point):
                raise ValueError(f"Point {point} is not strictly inside the unit square")
        if len(set(points)) != len(points):
            raise ValueError(f"Points must be pairwise distinct, got {points}")
        return points

    @model_validator(mode="after")
    def check_form(self):
        if self.kind is ConstraintKind.MULTILINEAR:
            m = self.form_tensor().ndim
            if self.num_solutions is not None and self.num_solutions != m:
                raise ValueError(f"Form '{self.form}' takes {m} solutions, num_solutions is {self.num_solutions}")
            if self.initial is not None and len(self.initial) != m:
                raise ValueError(f"Expected {m} initial traces, got {len(self.initial)}")
        elif self.initial is not None and len(self.initial) != 1:
            raise ValueError("Gradient constraints take exactly one initial trace")
        return self

    def form_tensor(self) -> np.ndarray:
        if self.form == "determinant":
            return DETERMINANT_2D
        if self.form == "projection":
            return FIRST_COMPONENT
        if self.tensor is None:
            raise ValueError("constraint.form = tensor needs constraint.tensor")
        tensor = np.asarray(self.tensor, dtype=np.float64)
        if tensor.ndim < 1 or any(d != 2 for d in tensor.shape):
            raise ValueError(f"constraint.tensor must have shape (2,) * m, got {tensor.shape}")
        return tensor

    def to_spec(self, mesh: Mesh) -> ConstraintSpec:
        return ConstraintSpec(
            kind=self.kind,
            points=[mesh_service.locate(mesh, p) for p in self.points],
            threshold=self.threshold,
            mu_clamp=self.mu_clamp,
            tensor=self.form_tensor() if self.kind is ConstraintKind.MULTILINEAR else None,
        )


class CertifyConfig(_Section):
    trials: int = Field(20, ge=1, description="Random (f, g) pairs for the duality certificate")
    directions: int = Field(16, ge=8, description="Unit dipole directions for the injectivity certificate")
    s_samples: List[float] = Field([0.0, 0.5, 1.0], min_length=1, description="Homotopy parameters to certify")
    lipschitz_pairs: int = Field(20, ge=1, description="Random pairs per s for the Lipschitz certificate")
    eta: float = Field(0.5, gt=0.0, description="Feasibility margin |grad u(x_hat)| > eta for Lipschitz samples")
    sign_trials: int = Field(50, ge=1, description="Random (f, s, gamma) triples for the sign certificate")
    competitors: int = Field(20, ge=1, description="Random feasible competitors for the KKT certificate")
    golden_path: Optional[str] = Field(None, description="Golden constants file; defaults to output_dir")
    duality_tolerance: float = Field(1e-8, gt=0.0, description="Relative tolerance of the duality certificate")

    @field_validator("s_samples")
    @classmethod
    def check_samples(cls, samples: List[float]) -> List[float]:
        if any(not 0.0 <= s <= 1.0 for s in samples):
            raise ValueError(f"s_samples must lie in [0, 1], got {samples}")
        return samples


class SweepConfig(_Section):
    key: Optional[str] = Field(None, description="Dotted key varied by the sweep; list indices allowed")
    values: List[Any] = Field(default_factory=list, description="One synthesis per value")


class RunConfig(_Section):
    mesh: MeshConfig = Field(default_factory=MeshConfig)
    coefficient: CoefficientExpr = Field(..., description="Target coefficient gamma")
    reference: CoefficientExpr = Field(
        default_factory=lambda: ConstantCoefficient(value=1.0), description="Starting coefficient gamma0"
    )
    constraint: ConstraintConfig = Field(default_factory=ConstraintConfig)
    integrator: IntegratorOptions = Field(default_factory=IntegratorOptions)
    solver: SolverOptions = Field(default_factory=SolverOptions)
    certify: CertifyConfig = Field(default_factory=CertifyConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    output_dir: str = Field("output", description="Directory for every artifact of the run")
    seed: int = Field(0, description="Seed for every random draw")

    @classmethod
    def from_mapping(cls, mapping: Dict[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(mapping)
        except ValidationError as e:
            first = e.errors()[0]
            key = ".".join(str(part) for part in first["loc"])
            raise ConfigError(first["msg"], key=key or None) from e

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls.from_mapping(parse_dotted_config(text))

    @classmethod
    def from_file(cls, path: Path) -> "RunConfig":
        return cls.from_text(read_config_text(path))

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    @property
    def golden_path(self) -> Path:
        return Path(self.certify.golden_path) if self.certify.golden_path else self.output_path / "golden.json"


def read_config_text(path: Path) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"Cannot read configuration {path}: {e.strerror}") from e
