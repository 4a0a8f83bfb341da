import numpy as np
import pytest
from models.coefficient import Bump, ConstantCoefficient, GaussianBumpsCoefficient
from models.control import ConstraintKind, ConstraintSpec
from services import homotopy_service, mesh_service
from services.elliptic_service import HomotopyProblem


@pytest.fixture(scope="session")
def mesh4():
    return mesh_service.build_structured(4)


@pytest.fixture(scope="session")
def mesh8():
    return mesh_service.build_structured(8)


@pytest.fixture(scope="session")
def mesh16():
    return mesh_service.build_structured(16)


@pytest.fixture(scope="session")
def mesh32():
    return mesh_service.build_structured(32)


@pytest.fixture
def unit_expr():
    return ConstantCoefficient(value=1.0)


@pytest.fixture
def bump_expr():
    """1 + 0.5 exp(-20 |x - (0.7, 0.3)|^2)."""
    return GaussianBumpsCoefficient(base=1.0, bumps=[Bump(amplitude=0.5, center=(0.7, 0.3), width_sq=0.05)])


@pytest.fixture
def bump_problem16(mesh16, unit_expr, bump_expr) -> HomotopyProblem:
    return homotopy_service.build_problem(mesh16, unit_expr, bump_expr)


@pytest.fixture
def identity_problem16(mesh16, unit_expr) -> HomotopyProblem:
    return homotopy_service.build_problem(mesh16, unit_expr, unit_expr)


@pytest.fixture
def center_spec16(mesh16) -> ConstraintSpec:
    return ConstraintSpec(kind=ConstraintKind.SINGLE_GRADIENT, points=[mesh_service.locate(mesh16, (0.5, 0.5))])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
