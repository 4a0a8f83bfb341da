from typing import Any, Dict

from pydantic import BaseModel, Field

NORM_SUBSTITUTION = "discrete L2 norms (lumped mass) stand in for the Hoelder and L^p norms of the continuous estimates"


class CertificateReport(BaseModel):
    """Outcome of one numerical certificate; ``passed`` is the certificate's own verdict on ``measured``."""

    name: str = Field(..., description="Certificate name, used as the JSON file stem")
    passed: bool = Field(..., description="Whether every measured quantity is within tolerance")
    measured: Dict[str, float] = Field(default_factory=dict, description="Measured quantities by name")
    tolerance: float = Field(..., description="Primary tolerance the verdict is based on")
    context: Dict[str, Any] = Field(
        default_factory=dict, description="Mesh size, coefficient descriptions, s-values, seeds, norm substitution"
    )
