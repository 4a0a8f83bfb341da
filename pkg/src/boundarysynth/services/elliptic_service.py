"""Finite element solves for the primal, linearized and adjoint Dirichlet problems.

All three share the stiffness matrix K(gamma_s) with the Dirichlet boundary rows eliminated. The adjoint load is
the exact discrete representer of w -> y . grad w_h(x_hat), so the duality identity

    grad u(x_hat) . grad v(x_hat) = -lambda^T K(gamma') u - <flux(lambda), g>

holds up to solver tolerance.
"""

import threading
from collections import OrderedDict
from typing import Literal, Optional

import numpy as np
import scipy.sparse as sps
from aws_lambda_powertools import Logger
from models.fields import BoundaryTrace, Coefficient, DipoleSpec, Field
from models.linalg import SolverOptions
from models.mesh import Mesh, PointLocation
from numpy.typing import NDArray
from services import coefficient_service
from services.solver_service import LinearSolver
from utils.errors import CoefficientError, SolverError

logger = Logger()

OPERATOR_CACHE_SIZE = 8


def assemble_stiffness(mesh: Mesh, gamma: Coefficient) -> sps.csr_matrix:
    """Full stiffness matrix K[i, j] = sum_T gamma_T int_T grad phi_i . grad phi_j."""
    if gamma.triangle_count != mesh.triangle_count:
        raise CoefficientError(
            f"Coefficient has {gamma.triangle_count} values for a mesh with {mesh.triangle_count} triangles"
        )
    local = gamma.per_element_values[:, None, None] * mesh.unit_stiffness
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    K = sps.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.node_count, mesh.node_count)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


def linear_trace(mesh: Mesh, name: Literal["x1", "x2"]) -> BoundaryTrace:
    """Boundary values of the coordinate function x1 or x2."""
    axis = {"x1": 0, "x2": 1}[name]
    return BoundaryTrace(mesh.vertices[mesh.boundary_nodes, axis].copy())


def gradient_at(mesh: Mesh, u: Field, loc: PointLocation) -> NDArray[np.float64]:
    """The constant P1 gradient on the triangle holding the point."""
    t = loc.triangle_index
    return mesh.basis_gradients[t].T @ u.nodal_values[mesh.triangles[t]]


def dipole_load(mesh: Mesh, dipole: DipoleSpec) -> NDArray[np.float64]:
    """Load vector r_j = y . grad phi_j(x_hat) on the nodes of the containing triangle."""
    t = dipole.point.triangle_index
    load = np.zeros(mesh.node_count)
    load[mesh.triangles[t]] = mesh.basis_gradients[t] @ dipole.direction
    return load


def boundary_l2_inner(mesh: Mesh, a: BoundaryTrace, b: BoundaryTrace) -> float:
    """Lumped boundary L2 inner product sum_b m_b a_b b_b."""
    return float(np.sum(mesh.boundary_mass * a.values * b.values))


def boundary_l2_norm(mesh: Mesh, a: BoundaryTrace) -> float:
    return float(np.sqrt(boundary_l2_inner(mesh, a, a)))


def volume_term(K_prime: sps.csr_matrix, lam: Field, u: Field) -> float:
    """Discrete int lambda div(gamma' grad u) = -lambda^T K(gamma') u; lambda vanishes on the boundary."""
    return float(-lam.nodal_values @ (K_prime @ u.nodal_values))


class EllipticOperator:
    """K(gamma) with the Dirichlet rows eliminated and its interior block factorized on first use."""

    def __init__(self, mesh: Mesh, gamma: Coefficient, options: Optional[SolverOptions] = None) -> None:
        self.mesh = mesh
        self.gamma = gamma
        self.K = assemble_stiffness(mesh, gamma)
        interior, boundary = mesh.interior_nodes, mesh.boundary_nodes
        rows = self.K[interior]
        self.K_II = rows[:, interior].tocsr()
        self.K_IB = rows[:, boundary].tocsr()
        self.solver = LinearSolver(self.K_II, options)

    def _lift(self, interior_values: NDArray[np.float64], boundary_values: NDArray[np.float64]) -> NDArray[np.float64]:
        nodal = np.empty((self.mesh.node_count,) + interior_values.shape[1:])
        nodal[self.mesh.interior_nodes] = interior_values
        nodal[self.mesh.boundary_nodes] = boundary_values
        return nodal

    def solve_dirichlet(self, f: BoundaryTrace, rhs_volume: Optional[NDArray[np.float64]] = None) -> Field:
        """u = f on the boundary and K_II u_I = -K_IB f + rhs_I; ``rhs_volume`` is a nodal load vector."""
        if f.values.shape != (self.mesh.boundary_count,):
            raise SolverError(f"Boundary trace has {f.values.shape} values, expected {self.mesh.boundary_count}")
        if not np.all(np.isfinite(f.values)):
            raise SolverError("Boundary trace is not finite")
        rhs = -(self.K_IB @ f.values)
        if rhs_volume is not None:
            rhs = rhs + np.asarray(rhs_volume)[self.mesh.interior_nodes]
        u_I, report = self.solver.solve(rhs)
        logger.debug("Dirichlet solve", extra={"iterations": report.iterations, "residual": report.final_residual})
        return Field(self._lift(u_I, f.values))

    def solve_dirichlet_many(self, traces: NDArray[np.float64]) -> NDArray[np.float64]:
        """Solve for a block of traces, shape (k, boundary_count); returns nodal values, shape (k, node_count)."""
        rhs = -(self.K_IB @ traces.T)
        u_I, _ = self.solver.solve(rhs)
        return self._lift(u_I, traces.T).T

    def solve_linearized(self, K_prime: sps.csr_matrix, u: Field, g: BoundaryTrace) -> Field:
        """v = g on the boundary and K_II v_I = -K_IB g - [K(gamma') u]_I."""
        source = -(K_prime @ u.nodal_values)
        return self.solve_dirichlet(g, rhs_volume=source)

    def solve_adjoint_loads(self, loads: NDArray[np.float64]) -> NDArray[np.float64]:
        """Adjoint solves K_II^T lambda_I = r_I for nodal loads of shape (k, node_count); lambda = 0 on the boundary."""
        interior = self.mesh.interior_nodes
        rhs = loads[:, interior].T
        lam_I, report = self.solver.solve_transpose(rhs)
        logger.debug("Adjoint solve", extra={"count": loads.shape[0], "residual": report.final_residual})
        return self._lift(lam_I, np.zeros((self.mesh.boundary_count, loads.shape[0]))).T

    def solve_adjoint(self, dipole: DipoleSpec) -> Field:
        load = dipole_load(self.mesh, dipole)
        return Field(self.solve_adjoint_loads(load[None, :])[0])

    def conormal_flux(self, lam: Field, load: NDArray[np.float64]) -> BoundaryTrace:
        """Discrete Neumann trace by residual lifting: ([K lambda]_b - r_b) / m_b."""
        boundary = self.mesh.boundary_nodes
        residual = (self.K @ lam.nodal_values)[boundary] - load[boundary]
        return BoundaryTrace(residual / self.mesh.boundary_mass)


def solve_dirichlet(
    mesh: Mesh,
    gamma: Coefficient,
    f: BoundaryTrace,
    rhs_volume: Optional[NDArray[np.float64]] = None,
    options: Optional[SolverOptions] = None,
) -> Field:
    return EllipticOperator(mesh, gamma, options).solve_dirichlet(f, rhs_volume)


def solve_linearized(
    mesh: Mesh,
    gamma_s: Coefficient,
    gamma_prime: Coefficient,
    u: Field,
    g: BoundaryTrace,
    options: Optional[SolverOptions] = None,
) -> Field:
    K_prime = assemble_stiffness(mesh, gamma_prime)
    return EllipticOperator(mesh, gamma_s, options).solve_linearized(K_prime, u, g)


def solve_adjoint(
    mesh: Mesh, gamma_s: Coefficient, dipole: DipoleSpec, options: Optional[SolverOptions] = None
) -> Field:
    return EllipticOperator(mesh, gamma_s, options).solve_adjoint(dipole)


def conormal_flux(mesh: Mesh, gamma_s: Coefficient, lam: Field, load: NDArray[np.float64]) -> BoundaryTrace:
    return EllipticOperator(mesh, gamma_s).conormal_flux(lam, load)


class HomotopyProblem:
    """Mesh, endpoint coefficients and solver options shared along gamma_s = (1 - s) gamma0 + s gamma.

    gamma' = gamma - gamma0 and K(gamma') are built once. Operators for individual s are cached (bounded, built
    under a lock) so repeated evaluations at one s, like the corrector after a predictor stage, reuse the factor.
    """

    def __init__(
        self,
        mesh: Mesh,
        gamma0: Coefficient,
        gamma: Coefficient,
        options: Optional[SolverOptions] = None,
    ) -> None:
        self.mesh = mesh
        self.gamma0 = gamma0
        self.gamma = gamma
        self.options = options or SolverOptions()
        self.gamma_prime = coefficient_service.difference(gamma, gamma0)
        self.K_prime = assemble_stiffness(mesh, self.gamma_prime)
        self._operators: "OrderedDict[float, EllipticOperator]" = OrderedDict()
        self._lock = threading.Lock()

    @property
    def is_stationary(self) -> bool:
        return self.gamma_prime.is_zero

    def gamma_at(self, s: float) -> Coefficient:
        return coefficient_service.blend(self.gamma0, self.gamma, s)

    def operator(self, s: float) -> EllipticOperator:
        key = float(s)
        with self._lock:
            cached = self._operators.get(key)
            if cached is not None:
                self._operators.move_to_end(key)
                return cached
            operator = EllipticOperator(self.mesh, self.gamma_at(key), self.options)
            self._operators[key] = operator
            if len(self._operators) > OPERATOR_CACHE_SIZE:
                self._operators.popitem(last=False)
            return operator
