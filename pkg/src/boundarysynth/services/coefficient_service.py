import numpy as np
from aws_lambda_powertools import Logger
from models.coefficient import CoefficientExpr
from models.fields import Coefficient
from models.mesh import Mesh
from utils.errors import CoefficientError

logger = Logger()


def evaluate(expr: CoefficientExpr, mesh: Mesh) -> Coefficient:
    """Sample the expression at triangle centroids; bounds are checked, then tightened to the sampled range."""
    values = np.asarray(expr.values_at(mesh.centroids), dtype=np.float64)
    c, C = expr.declared_bounds
    outside = np.flatnonzero(~np.isfinite(values) | (values < c) | (values > C))
    if outside.size:
        k = int(outside[0])
        raise CoefficientError(
            f"Coefficient {expr.describe()} gives {values[k]!r} on element {k} "
            f"(centroid {tuple(mesh.centroids[k].round(6).tolist())}), outside declared bounds [{c:g}, {C:g}]"
        )
    return Coefficient(
        per_element_values=values,
        lower_bound=float(values.min()),
        upper_bound=float(values.max()),
        description=expr.describe(),
    )


def _check_same_mesh(a: Coefficient, b: Coefficient) -> None:
    if a.triangle_count != b.triangle_count:
        raise CoefficientError(
            f"Coefficients live on different meshes ({a.triangle_count} vs {b.triangle_count} elements)"
        )


def blend(gamma0: Coefficient, gamma1: Coefficient, s: float) -> Coefficient:
    """gamma_s = (1 - s) gamma0 + s gamma1."""
    _check_same_mesh(gamma0, gamma1)
    if not 0.0 <= s <= 1.0:
        raise CoefficientError(f"Homotopy parameter must lie in [0, 1], got {s}")
    if s == 0.0:
        return gamma0
    if s == 1.0:
        return gamma1
    values = (1.0 - s) * gamma0.per_element_values + s * gamma1.per_element_values
    lower = (1.0 - s) * gamma0.lower_bound + s * gamma1.lower_bound
    upper = (1.0 - s) * gamma0.upper_bound + s * gamma1.upper_bound
    # rounding in the convex combination can leave a value an ulp outside the combined bounds
    values = np.clip(values, lower, upper)
    return Coefficient(
        per_element_values=values,
        lower_bound=lower,
        upper_bound=upper,
        signed=gamma0.signed or gamma1.signed,
        description=f"blend(s={s:g})",
    )


def difference(gamma1: Coefficient, gamma0: Coefficient) -> Coefficient:
    """Homotopy velocity gamma1 - gamma0, independent of s."""
    _check_same_mesh(gamma0, gamma1)
    values = gamma1.per_element_values - gamma0.per_element_values
    return Coefficient(
        per_element_values=values,
        lower_bound=float(values.min()),
        upper_bound=float(values.max()),
        signed=True,
        description=f"({gamma1.description}) - ({gamma0.description})",
    )
