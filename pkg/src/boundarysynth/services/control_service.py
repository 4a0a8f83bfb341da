"""Control functionals: the minimal-norm boundary velocity that keeps a protected gradient quantity from decreasing.

Every variant follows one pattern. Solve the primal problem at s, read the gradients at the constrained point(s),
pick adjoint directions y_i (grad u for gradient norms, the slot derivative of L for multilinear forms), solve the
adjoint problems in one block, and combine the conormal fluxes. By discrete duality

    y_i . grad v(x_i) = volume_i - <flux_i, g>,

so g in the span of the fluxes fixes every derivative exactly.

In 3D the determinant of three gradients has slot derivatives grad u^{i+1} x grad u^{i+2}; in 2D the slot
derivatives of det are the rotated gradients, and both are instances of ``slot_gradient`` below. A general
nonlinear H(grad u^1, ..., grad u^m) with DH bounded away from zero would plug in through the same directions.
"""

from typing import List, Sequence, Tuple

import numpy as np
from aws_lambda_powertools import Logger
from models.control import Branch, ConstraintKind, ConstraintSpec, ControlOutput, ControlRecord
from models.fields import BoundaryTrace, DipoleSpec, Field
from models.mesh import PointLocation
from numpy.typing import NDArray
from services.elliptic_service import (
    EllipticOperator,
    HomotopyProblem,
    boundary_l2_norm,
    dipole_load,
    gradient_at,
    volume_term,
)
from utils.errors import ControlError, CriticalPointError

logger = Logger()

DEGENERATE_FLUX = 1e-14
MAX_GRAM_CONDITION = 1e12
CRITICAL_GRADIENT = 1e-12


def slot_gradient(
    tensor: NDArray[np.float64], vectors: Sequence[NDArray[np.float64]], slot: int
) -> NDArray[np.float64]:
    """Partial derivative of the multilinear form in one slot: contract every other slot with its vector."""
    out = tensor
    for k in reversed(range(len(vectors))):
        if k != slot:
            out = np.tensordot(out, vectors[k], axes=([k], [0]))
    return np.asarray(out, dtype=np.float64)


def multilinear_value(tensor: NDArray[np.float64], vectors: Sequence[NDArray[np.float64]]) -> float:
    return float(slot_gradient(tensor, vectors, 0) @ vectors[0])


def adjoint_fluxes(
    operator: EllipticOperator, locations: Sequence[PointLocation], directions: NDArray[np.float64]
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Adjoint states and conormal fluxes for several dipoles, solved as one block.

    Returns nodal adjoints of shape (k, node_count) and fluxes of shape (k, boundary_count).
    """
    mesh = operator.mesh
    loads = np.stack([dipole_load(mesh, DipoleSpec(loc, np.asarray(y))) for loc, y in zip(locations, directions)])
    lams = operator.solve_adjoint_loads(loads)
    boundary = mesh.boundary_nodes
    residual = (operator.K @ lams.T)[boundary] - loads[:, boundary].T
    return lams, (residual / mesh.boundary_mass[:, None]).T


def _gram(problem: HomotopyProblem, fluxes: NDArray[np.float64]) -> NDArray[np.float64]:
    return (fluxes * problem.mesh.boundary_mass) @ fluxes.T


def _zero_output(problem: HomotopyProblem, count: int, degenerate: bool) -> ControlOutput:
    size = problem.mesh.boundary_count
    return ControlOutput(
        g=[BoundaryTrace.zeros(size) for _ in range(count)],
        mu=0.0,
        multipliers=np.zeros(1),
        volume_terms=np.zeros(count),
        flux_norm_sq=0.0,
        branch=Branch.INACTIVE,
        degenerate=degenerate,
    )


def control_functional(problem: HomotopyProblem, s: float, f: BoundaryTrace, spec: ConstraintSpec) -> ControlOutput:
    """F(f, s): zero when the multiplier is non-negative, mu * flux otherwise."""
    operator = problem.operator(s)
    loc = spec.points[0]
    u = operator.solve_dirichlet(f)
    y = gradient_at(problem.mesh, u, loc)
    if not np.any(y):
        logger.warning("Gradient vanished at the constrained point; returning g = 0", extra={"s": s})
        return _zero_output(problem, 1, degenerate=True)

    lams, fluxes = adjoint_fluxes(operator, [loc], y[None, :])
    volume = volume_term(problem.K_prime, Field(lams[0]), u)
    flux_norm_sq = float(_gram(problem, fluxes)[0, 0])
    if flux_norm_sq <= DEGENERATE_FLUX * float(y @ y):
        raise ControlError(
            f"adjoint flux degenerate at s={s:g}: |flux|^2={flux_norm_sq:.3e} for |y|={np.linalg.norm(y):.3e}; "
            "the mesh is likely too coarse"
        )

    mu = volume / flux_norm_sq
    flux = BoundaryTrace(fluxes[0])
    if mu >= 0.0:
        g, branch = BoundaryTrace.zeros(problem.mesh.boundary_count), Branch.INACTIVE
    else:
        g, branch = flux.scaled(mu), Branch.ACTIVE
    return ControlOutput(
        g=[g],
        mu=mu,
        multipliers=np.array([mu]),
        volume_terms=np.array([volume]),
        flux_norm_sq=flux_norm_sq,
        branch=branch,
        fluxes=[flux],
        directions=y[None, :],
    )


def control_functional_multipoint(
    problem: HomotopyProblem, s: float, f: BoundaryTrace, spec: ConstraintSpec
) -> ControlOutput:
    """g in the span of the fluxes with <flux_i, g> = volume_i for every point, so each derivative is zero."""
    operator = problem.operator(s)
    u = operator.solve_dirichlet(f)
    ys = np.stack([gradient_at(problem.mesh, u, loc) for loc in spec.points])
    norms = np.linalg.norm(ys, axis=1)
    if np.any(norms <= CRITICAL_GRADIENT):
        k = int(np.argmin(norms))
        raise CriticalPointError(f"Gradient vanished at point {tuple(spec.points[k].point.tolist())} (s={s:g})")

    lams, fluxes = adjoint_fluxes(operator, spec.points, ys)
    volumes = np.array([volume_term(problem.K_prime, Field(lam), u) for lam in lams])
    gram = _gram(problem, fluxes)
    condition = np.linalg.cond(gram)
    if not np.isfinite(condition) or condition > MAX_GRAM_CONDITION:
        raise ControlError(f"fluxes numerically dependent at s={s:g}: Gram condition number {condition:.3e}")

    coefficients = np.linalg.solve(gram, volumes)
    g = BoundaryTrace(coefficients @ fluxes)
    return ControlOutput(
        g=[g],
        mu=float(coefficients[0]),
        multipliers=coefficients,
        volume_terms=volumes,
        flux_norm_sq=float(np.trace(gram)),
        branch=Branch.ACTIVE if np.any(coefficients) else Branch.INACTIVE,
        fluxes=[BoundaryTrace(row) for row in fluxes],
        directions=ys,
    )


def control_functional_multilinear(
    problem: HomotopyProblem, s: float, fs: Sequence[BoundaryTrace], spec: ConstraintSpec
) -> ControlOutput:
    """Shared multiplier for all solutions: g^i = mu * flux^i, mu = sum volume_i / sum |flux^i|^2."""
    assert spec.tensor is not None
    if len(fs) != spec.num_solutions:
        raise ControlError(f"Expected {spec.num_solutions} boundary traces, got {len(fs)}")
    operator = problem.operator(s)
    loc = spec.points[0]
    us = operator.solve_dirichlet_many(np.stack([f.values for f in fs]))
    grads = [gradient_at(problem.mesh, Field(u), loc) for u in us]
    directions = np.stack([slot_gradient(spec.tensor, grads, i) for i in range(len(grads))])
    if not np.any(directions):
        logger.warning("Every slot derivative vanished; returning g = 0", extra={"s": s})
        return _zero_output(problem, len(fs), degenerate=True)

    lams, fluxes = adjoint_fluxes(operator, [loc] * len(fs), directions)
    volumes = np.array([volume_term(problem.K_prime, Field(lam), Field(u)) for lam, u in zip(lams, us)])
    flux_norm_sq = float(np.trace(_gram(problem, fluxes)))
    if flux_norm_sq <= DEGENERATE_FLUX * float(np.sum(directions * directions)):
        raise ControlError(f"adjoint flux degenerate at s={s:g}: summed |flux|^2={flux_norm_sq:.3e}")

    mu = float(np.sum(volumes)) / flux_norm_sq
    if spec.mu_clamp:
        mu = min(0.0, mu)
    branch = Branch.INACTIVE if mu == 0.0 else Branch.ACTIVE
    return ControlOutput(
        g=[BoundaryTrace(mu * flux) for flux in fluxes],
        mu=mu,
        multipliers=np.array([mu]),
        volume_terms=volumes,
        flux_norm_sq=flux_norm_sq,
        branch=branch,
        fluxes=[BoundaryTrace(row) for row in fluxes],
        directions=directions,
    )


def evaluate_control(
    problem: HomotopyProblem, s: float, fs: Sequence[BoundaryTrace], spec: ConstraintSpec
) -> ControlOutput:
    if spec.kind is ConstraintKind.SINGLE_GRADIENT:
        return control_functional(problem, s, fs[0], spec)
    if spec.kind is ConstraintKind.MULTI_POINT:
        return control_functional_multipoint(problem, s, fs[0], spec)
    return control_functional_multilinear(problem, s, fs, spec)


def constraint_values(
    problem: HomotopyProblem, s: float, fs: Sequence[BoundaryTrace], spec: ConstraintSpec
) -> Tuple[float, NDArray[np.float64]]:
    """Protected value and its per-point parts: min_i |grad u(x_i)| for gradient kinds, L(grad u^1, ...) otherwise."""
    operator = problem.operator(s)
    if spec.kind is ConstraintKind.MULTILINEAR:
        assert spec.tensor is not None
        us = operator.solve_dirichlet_many(np.stack([f.values for f in fs]))
        grads = [gradient_at(problem.mesh, Field(u), spec.points[0]) for u in us]
        value = multilinear_value(spec.tensor, grads)
        return value, np.array([value])
    u = operator.solve_dirichlet(fs[0])
    parts = np.array([np.linalg.norm(gradient_at(problem.mesh, u, loc)) for loc in spec.points])
    return float(parts.min()), parts


def restore_constraint(
    problem: HomotopyProblem,
    s: float,
    fs: Sequence[BoundaryTrace],
    spec: ConstraintSpec,
    targets: NDArray[np.float64],
    max_iterations: int = 3,
) -> Tuple[List[BoundaryTrace], float]:
    """Minimal-norm change of the boundary data at fixed s that lifts the protected values back to ``targets``.

    For gradient norms grad u(x_i) is linear in the data, so the first-order step already reaches the targets.
    Multilinear forms are corrected by Newton iterations. Returns the corrected traces and the correction norm.
    """
    operator = problem.operator(s)
    mesh = problem.mesh
    if spec.kind is not ConstraintKind.MULTILINEAR:
        u = operator.solve_dirichlet(fs[0])
        ys = np.stack([gradient_at(mesh, u, loc) for loc in spec.points])
        deficits = np.maximum(0.0, 0.5 * (targets**2 - np.sum(ys * ys, axis=1)))
        if not np.any(deficits):
            return list(fs), 0.0
        if np.any(np.linalg.norm(ys, axis=1) <= CRITICAL_GRADIENT):
            raise CriticalPointError(f"Cannot restore a vanished gradient at s={s:g}")
        _, fluxes = adjoint_fluxes(operator, spec.points, ys)
        coefficients = np.linalg.solve(_gram(problem, fluxes), -deficits)
        correction = BoundaryTrace(coefficients @ fluxes)
        return [fs[0] + correction], boundary_l2_norm(mesh, correction)

    assert spec.tensor is not None
    current = list(fs)
    total = np.zeros((len(fs), mesh.boundary_count))
    for _ in range(max_iterations):
        us = operator.solve_dirichlet_many(np.stack([f.values for f in current]))
        grads = [gradient_at(mesh, Field(u), spec.points[0]) for u in us]
        deficit = float(targets[0]) - multilinear_value(spec.tensor, grads)
        if deficit <= 0.0:
            break
        directions = np.stack([slot_gradient(spec.tensor, grads, i) for i in range(len(grads))])
        if not np.any(directions):
            raise CriticalPointError(f"Multilinear form has a vanishing differential at s={s:g}")
        _, fluxes = adjoint_fluxes(operator, [spec.points[0]] * len(current), directions)
        step = -deficit / float(np.trace(_gram(problem, fluxes)))
        current = [f + BoundaryTrace(step * flux) for f, flux in zip(current, fluxes)]
        total += step * fluxes
    norm = float(np.sqrt(np.sum(total * total * mesh.boundary_mass)))
    return current, norm


def naive_scaling_step(
    problem: HomotopyProblem, s: float, phi: float, f0: BoundaryTrace, point: PointLocation
) -> float:
    """phi'(s) for the scaling scheme f_s = phi(s) f0: phi' / phi = max(0, -grad u . grad w / |grad u|^2)."""
    if phi == 0.0:
        raise ControlError("The scaling factor phi must be non-zero")
    operator = problem.operator(s)
    u = operator.solve_dirichlet(f0.scaled(phi))
    w = operator.solve_linearized(problem.K_prime, u, BoundaryTrace.zeros(problem.mesh.boundary_count))
    grad_u = gradient_at(problem.mesh, u, point)
    grad_w = gradient_at(problem.mesh, w, point)
    norm_sq = float(grad_u @ grad_u)
    if np.sqrt(norm_sq) <= CRITICAL_GRADIENT * max(1.0, abs(phi)):
        raise CriticalPointError(f"naive scheme hit a critical point at s={s:g}")
    return phi * max(0.0, -float(grad_u @ grad_w) / norm_sq)


def to_record(problem: HomotopyProblem, s: float, output: ControlOutput) -> ControlRecord:
    g_norm = float(np.sqrt(sum(boundary_l2_norm(problem.mesh, g) ** 2 for g in output.g)))
    return ControlRecord(
        s=s,
        mu=output.mu,
        branch=output.branch,
        volume_term=output.volume_term,
        flux_norm_sq=output.flux_norm_sq,
        g_l2_norm=g_norm,
    )
