import numpy as np
import pytest
from models.coefficient import (
    Bump,
    CoefficientExpr,
    ConstantCoefficient,
    GaussianBumpsCoefficient,
    PiecewiseSmoothstepCoefficient,
    SinusoidalCoefficient,
)
from models.fields import Coefficient
from pydantic import TypeAdapter, ValidationError
from services import coefficient_service
from utils.errors import CoefficientError


@pytest.mark.unit
def test_constant_coefficient(mesh4):
    gamma = coefficient_service.evaluate(ConstantCoefficient(value=1.0), mesh4)
    assert np.all(gamma.per_element_values == 1.0)
    assert (gamma.lower_bound, gamma.upper_bound) == (1.0, 1.0)


@pytest.mark.unit
def test_gaussian_bump_values(mesh32, bump_expr):
    gamma = coefficient_service.evaluate(bump_expr, mesh32)
    nearest = np.argmin(np.linalg.norm(mesh32.centroids - [0.7, 0.3], axis=1))
    corner = np.argmin(np.linalg.norm(mesh32.centroids - [0.0, 1.0], axis=1))
    assert gamma.per_element_values[nearest] == pytest.approx(1.5, abs=0.01)
    assert gamma.per_element_values[corner] == pytest.approx(1.0, abs=1e-6)
    assert gamma.lower_bound == gamma.per_element_values.min()
    assert gamma.upper_bound == gamma.per_element_values.max()


@pytest.mark.unit
def test_negative_values_name_the_element(mesh8):
    expr = GaussianBumpsCoefficient(base=1.0, bumps=[Bump(amplitude=-2.0, center=(0.5, 0.5), width_sq=0.05)])
    with pytest.raises(CoefficientError, match="element"):
        coefficient_service.evaluate(expr, mesh8)


@pytest.mark.unit
def test_declared_bounds_must_be_positive():
    with pytest.raises(ValidationError):
        ConstantCoefficient(value=1.0, declared_bounds=(0.0, 2.0))


@pytest.mark.unit
def test_expression_parses_from_mapping_by_kind():
    adapter = TypeAdapter(CoefficientExpr)
    expr = adapter.validate_python({"kind": "sinusoidal", "amplitude": 0.5, "frequencies": [2, 1]})
    assert isinstance(expr, SinusoidalCoefficient)
    assert expr.describe().startswith("1 + 0.5*cos")
    with pytest.raises(ValidationError):
        adapter.validate_python({"kind": "raster"})


@pytest.mark.unit
def test_smoothstep_inside_and_outside():
    expr = PiecewiseSmoothstepCoefficient(inside=2.0, outside=1.0, center=(0.5, 0.5), radius=0.25, transition=0.1)
    values = expr.values_at(np.array([[0.5, 0.5], [0.95, 0.95], [0.5, 0.75]]))
    assert values[0] == 2.0
    assert values[1] == 1.0
    assert values[2] == pytest.approx(1.5)


@pytest.mark.unit
def test_blend_endpoints_are_exact(mesh8, bump_expr, unit_expr):
    g0 = coefficient_service.evaluate(unit_expr, mesh8)
    g1 = coefficient_service.evaluate(bump_expr, mesh8)
    assert coefficient_service.blend(g0, g1, 0.0) is g0
    assert coefficient_service.blend(g0, g1, 1.0) is g1


@pytest.mark.unit
def test_blend_midpoint_of_constants(mesh4):
    g0 = coefficient_service.evaluate(ConstantCoefficient(value=1.0), mesh4)
    g1 = coefficient_service.evaluate(ConstantCoefficient(value=3.0), mesh4)
    mid = coefficient_service.blend(g0, g1, 0.5)
    assert np.all(mid.per_element_values == 2.0)
    assert (mid.lower_bound, mid.upper_bound) == (2.0, 2.0)


@pytest.mark.unit
def test_blend_is_affine(mesh8, bump_expr, unit_expr):
    g0 = coefficient_service.evaluate(ConstantCoefficient(value=1.0), mesh8)
    g1 = coefficient_service.evaluate(ConstantCoefficient(value=3.0), mesh8)
    total = coefficient_service.blend(g0, g1, 0.25).per_element_values + coefficient_service.blend(g0, g1, 0.75).per_element_values
    assert np.all(total == 4.0)

    a = coefficient_service.evaluate(unit_expr, mesh8)
    b = coefficient_service.evaluate(bump_expr, mesh8)
    total = coefficient_service.blend(a, b, 0.3).per_element_values + coefficient_service.blend(a, b, 0.7).per_element_values
    np.testing.assert_allclose(total, a.per_element_values + b.per_element_values, rtol=0.0, atol=4e-15)


@pytest.mark.unit
def test_blend_rejects_other_meshes_and_parameters(mesh4, mesh8, unit_expr):
    g4 = coefficient_service.evaluate(unit_expr, mesh4)
    g8 = coefficient_service.evaluate(unit_expr, mesh8)
    with pytest.raises(CoefficientError):
        coefficient_service.blend(g4, g8, 0.5)
    with pytest.raises(CoefficientError):
        coefficient_service.blend(g4, g4, 1.5)


@pytest.mark.unit
def test_difference_is_signed(mesh8, bump_expr, unit_expr):
    g0 = coefficient_service.evaluate(bump_expr, mesh8)
    g1 = coefficient_service.evaluate(unit_expr, mesh8)
    delta = coefficient_service.difference(g1, g0)
    assert delta.signed
    assert delta.upper_bound <= 0.0 < -delta.lower_bound


@pytest.mark.unit
@pytest.mark.parametrize(
    "values,lower,signed",
    [
        (np.array([1.0, 3.0]), 0.5, False),
        (np.array([1.0, np.nan]), 0.5, False),
        (np.array([1.0, 2.0]), 0.0, False),
        (np.ones((2, 2)), 0.5, True),
    ],
)
def test_coefficient_rejects_invalid_values(values, lower, signed):
    with pytest.raises(CoefficientError):
        Coefficient(per_element_values=values, lower_bound=lower, upper_bound=2.0, signed=signed)


@pytest.mark.unit
def test_coefficient_needs_an_array():
    with pytest.raises(ValidationError):
        Coefficient(per_element_values=[1.0, 2.0], lower_bound=0.5, upper_bound=2.0)
