"""Types for sparse linear solves."""

from dataclasses import dataclass
from enum import StrEnum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class SolveMethod(StrEnum):
    DIRECT = "direct"
    CG = "cg"


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one linear solve."""

    iterations: int
    final_residual: float
    method: SolveMethod


class SolverOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    method: Literal["auto", "direct", "cg"] = Field("auto", description="auto picks direct below direct_limit unknowns")
    tol: float = Field(1e-12, gt=0.0, lt=1.0, description="Relative residual tolerance ||Ax-b||/||b||")
    direct_limit: int = Field(100_000, gt=0, description="Largest system factorized directly under 'auto'")
    refinement_steps: int = Field(2, ge=0, description="Iterative refinement steps allowed on the direct path")
