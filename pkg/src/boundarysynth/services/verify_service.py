"""Numerical certificates for the structural properties the synthesis relies on.

Certificates never raise for a failed check: they return a report with ``passed = False`` and the measured values.
Norms are the discrete lumped-mass L2 norms; every report records that substitution in its context.
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sps
from aws_lambda_powertools import Logger
from models.certificate import NORM_SUBSTITUTION, CertificateReport
from models.coefficient import Bump, CoefficientExpr, ConstantCoefficient, GaussianBumpsCoefficient
from models.control import ConstraintKind, ConstraintSpec
from models.fields import BoundaryTrace, Field
from models.linalg import SolverOptions
from models.mesh import Mesh
from numpy.typing import NDArray
from scipy.sparse.linalg import splu
from services import control_service, homotopy_service, mesh_service
from services.elliptic_service import (
    HomotopyProblem,
    boundary_l2_inner,
    boundary_l2_norm,
    gradient_at,
    volume_term,
)
from utils.errors import ControlError
from utils.helpers import random_fourier_trace

logger = Logger()

DEFAULT_POINT = (0.5, 0.5)
DEFAULT_S_SAMPLES = (0.0, 0.5, 1.0)
DUALITY_TOLERANCE = 1e-8
KKT_TOLERANCE = 1e-9
LINEARITY_TOLERANCE = 1e-12
COMPARABILITY_MARGIN = 1e-8
STABILITY_FACTOR = 4.0
KAPPA_LIMIT = 1e3
GOLDEN_RTOL = 0.01
SIGN_BUMP_WIDTH_SQ = 1.0 / 20.0


def _context(mesh: Mesh, gamma0: CoefficientExpr, gamma: CoefficientExpr, **extra) -> Dict:
    return {
        "n_per_side": mesh.n_per_side,
        "gamma0": gamma0.describe(),
        "gamma": gamma.describe(),
        "norms": NORM_SUBSTITUTION,
        **extra,
    }


def _random_trace(mesh: Mesh, rng: np.random.Generator) -> BoundaryTrace:
    return BoundaryTrace(random_fourier_trace(mesh.loop_parameter, mesh.perimeter, rng))


def _single_point_spec(mesh: Mesh, point: Sequence[float]) -> ConstraintSpec:
    return ConstraintSpec(kind=ConstraintKind.SINGLE_GRADIENT, points=[mesh_service.locate(mesh, point)])


def _nodal_l2(mesh: Mesh, values: NDArray[np.float64]) -> float:
    return float(np.sqrt(np.sum(mesh.nodal_mass * values * values)))


def certify_duality(
    mesh: Mesh,
    gamma0: CoefficientExpr,
    gamma: CoefficientExpr,
    s: float,
    trials: int = 20,
    seed: int = 0,
    tolerance: float = DUALITY_TOLERANCE,
    point: Sequence[float] = DEFAULT_POINT,
    options: Optional[SolverOptions] = None,
) -> CertificateReport:
    """grad u . grad v^g at the point against volume - <flux, g>, for random (f, g) pairs.

    The left side comes from a linearized primal solve, the right side from the adjoint; the discrepancy is
    relative to the largest of the three terms (absolute when all vanish).
    """
    problem = homotopy_service.build_problem(mesh, gamma0, gamma, options)
    operator = problem.operator(s)
    loc = mesh_service.locate(mesh, point)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        f = _random_trace(mesh, rng)
        g = _random_trace(mesh, rng)
        u = operator.solve_dirichlet(f)
        y = gradient_at(mesh, u, loc)
        v = operator.solve_linearized(problem.K_prime, u, g)
        lhs = float(y @ gradient_at(mesh, v, loc))
        lams, fluxes = control_service.adjoint_fluxes(operator, [loc], y[None, :])
        volume = volume_term(problem.K_prime, Field(lams[0]), u)
        boundary = boundary_l2_inner(mesh, BoundaryTrace(fluxes[0]), g)
        scale = max(abs(lhs), abs(volume), abs(boundary))
        error = abs(lhs - (volume - boundary))
        worst = max(worst, error / scale if scale > 0.0 else error)

    report = CertificateReport(
        name=f"duality_s{s:g}",
        passed=worst <= tolerance,
        measured={"max_relative_discrepancy": worst},
        tolerance=tolerance,
        context=_context(mesh, gamma0, gamma, s=s, trials=trials, seed=seed, point=list(point)),
    )
    logger.info("Duality certificate", extra={"s": s, "discrepancy": worst, "passed": report.passed})
    return report


def _unit_directions(count: int) -> NDArray[np.float64]:
    angles = 2.0 * np.pi * np.arange(count) / count
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def certify_injectivity_constants(
    mesh: Mesh,
    gamma0: CoefficientExpr,
    gamma: CoefficientExpr,
    s_samples: Sequence[float] = DEFAULT_S_SAMPLES,
    directions: int = 16,
    point: Sequence[float] = DEFAULT_POINT,
    options: Optional[SolverOptions] = None,
) -> CertificateReport:
    """Flux norms over unit dipole directions: rho_hat = min, eta_hat = max, with y = 0 and linearity sub-checks."""
    if directions < 8:
        raise ControlError(f"At least 8 directions are required, got {directions}")
    problem = homotopy_service.build_problem(mesh, gamma0, gamma, options)
    loc = mesh_service.locate(mesh, point)
    units = _unit_directions(directions)
    flux_norms: List[float] = []
    lambda_norms: List[float] = []
    zero_flux = 0.0
    linearity = 0.0
    for s in s_samples:
        operator = problem.operator(s)
        # unit directions, then y = 0, then 2 * y for the first direction
        batch = np.vstack([units, np.zeros((1, 2)), 2.0 * units[:1]])
        lams, fluxes = control_service.adjoint_fluxes(operator, [loc] * len(batch), batch)
        norms = [boundary_l2_norm(mesh, BoundaryTrace(row)) for row in fluxes]
        flux_norms.extend(norms[:directions])
        lambda_norms.extend(_nodal_l2(mesh, lam) for lam in lams[:directions])
        zero_flux = max(zero_flux, norms[directions])
        doubled = BoundaryTrace(fluxes[directions + 1] - 2.0 * fluxes[0])
        linearity = max(linearity, boundary_l2_norm(mesh, doubled) / max(2.0 * norms[0], np.finfo(float).tiny))

    rho_hat, eta_hat = min(flux_norms), max(flux_norms)
    passed = (
        rho_hat > 0.0
        and rho_hat >= COMPARABILITY_MARGIN * eta_hat
        and zero_flux < LINEARITY_TOLERANCE
        and linearity <= LINEARITY_TOLERANCE
    )
    report = CertificateReport(
        name="injectivity_constants",
        passed=passed,
        measured={
            "rho_hat": rho_hat,
            "eta_hat": eta_hat,
            "ratio": rho_hat / eta_hat if eta_hat > 0.0 else 0.0,
            "lambda_norm_min": min(lambda_norms),
            "lambda_norm_max": max(lambda_norms),
            "zero_direction_flux": zero_flux,
            "linearity_error": linearity,
        },
        tolerance=COMPARABILITY_MARGIN,
        context=_context(mesh, gamma0, gamma, s_samples=list(s_samples), directions=directions, point=list(point)),
    )
    logger.info("Injectivity certificate", extra={"rho_hat": rho_hat, "eta_hat": eta_hat, "passed": passed})
    return report


def _harmonic_samples(problem: HomotopyProblem, s: float, loc, y: NDArray[np.float64]) -> NDArray[np.float64]:
    """a_j = y . grad z_j(x_hat), z_j the gamma_s-harmonic extension of the j-th boundary hat function."""
    mesh = problem.mesh
    nodal = problem.operator(s).solve_dirichlet_many(np.eye(mesh.boundary_count))
    t = loc.triangle_index
    gradients = nodal[:, mesh.triangles[t]] @ mesh.basis_gradients[t]
    return gradients @ y


def _kkt_projection(mass: NDArray[np.float64], a: NDArray[np.float64], b: float) -> Tuple[NDArray[np.float64], float]:
    """min 1/2 g^T M g subject to a . g = -b, by factorizing the KKT matrix [[M, a], [a^T, 0]]."""
    n = a.shape[0]
    kkt = sps.csc_matrix(sps.bmat([[sps.diags(mass), sps.csr_matrix(a[:, None])], [sps.csr_matrix(a[None, :]), None]]))
    solution = splu(kkt).solve(np.concatenate([np.zeros(n), [-b]]))
    return solution[:n], -float(solution[n])


def certify_kkt_optimality(
    mesh: Mesh,
    gamma0: CoefficientExpr,
    gamma: CoefficientExpr,
    s: float,
    f: Optional[BoundaryTrace] = None,
    competitors: int = 20,
    seed: int = 0,
    tolerance: float = KKT_TOLERANCE,
    point: Sequence[float] = DEFAULT_POINT,
    options: Optional[SolverOptions] = None,
) -> CertificateReport:
    """Compare F(f, s) with the minimal-norm element of the discrete feasible half-space {g : a . g + b >= 0}.

    a and b come from direct linearized solves (one per boundary node), independent of the adjoint path.
    """
    problem = homotopy_service.build_problem(mesh, gamma0, gamma, options)
    spec = _single_point_spec(mesh, point)
    loc = spec.points[0]
    f = f if f is not None else homotopy_service.default_initial_traces(mesh, spec)[0]
    operator = problem.operator(s)

    output = control_service.control_functional(problem, s, f, spec)
    u = operator.solve_dirichlet(f)
    y = gradient_at(mesh, u, loc)
    zero = BoundaryTrace.zeros(mesh.boundary_count)
    b = float(y @ gradient_at(mesh, operator.solve_linearized(problem.K_prime, u, zero), loc))
    a = _harmonic_samples(problem, s, loc, y)
    mass = mesh.boundary_mass

    if b >= 0.0:
        oracle, multiplier = np.zeros(mesh.boundary_count), 0.0
        closed_form = oracle
    else:
        oracle, multiplier = _kkt_projection(mass, a, b)
        weighted = a / mass
        closed_form = (-b / float(a @ weighted)) * weighted

    F = output.trace
    F_norm = boundary_l2_norm(mesh, F)
    scale = max(1.0, F_norm)
    oracle_error = boundary_l2_norm(mesh, BoundaryTrace(oracle) - F) / scale
    closed_form_error = boundary_l2_norm(mesh, BoundaryTrace(closed_form) - F) / scale

    derivative = float(y @ gradient_at(mesh, operator.solve_linearized(problem.K_prime, u, F), loc))
    term_scale = max(abs(b), float(np.sqrt(np.sum(a * a / mass))) * F_norm, np.finfo(float).tiny)
    slackness = abs(multiplier * derivative) / (max(abs(multiplier), 1.0) * term_scale)

    rng = np.random.default_rng(seed)
    weighted = a / mass
    reach = float(a @ weighted)
    losses = 0
    worst_margin = np.inf
    for _ in range(competitors):
        g = rng.standard_normal(mesh.boundary_count)
        deficit = -b - float(a @ g)
        if deficit > 0.0 and reach > 0.0:
            g = g + (deficit / reach) * weighted
        g_norm = boundary_l2_norm(mesh, BoundaryTrace(g))
        margin = g_norm - F_norm
        worst_margin = min(worst_margin, margin)
        if margin < -tolerance * max(1.0, g_norm):
            losses += 1

    passed = oracle_error <= tolerance and closed_form_error <= tolerance and slackness <= tolerance and losses == 0
    report = CertificateReport(
        name=f"kkt_optimality_s{s:g}",
        passed=passed,
        measured={
            "oracle_l2_error": oracle_error,
            "closed_form_l2_error": closed_form_error,
            "complementary_slackness": slackness,
            "kkt_multiplier": multiplier,
            "mu": output.mu,
            "F_l2_norm": F_norm,
            "competitor_losses": float(losses),
            "worst_competitor_margin": float(worst_margin),
        },
        tolerance=tolerance,
        context=_context(
            mesh, gamma0, gamma, s=s, seed=seed, competitors=competitors, branch=output.branch.value, point=list(point)
        ),
    )
    logger.info("KKT certificate", extra={"s": s, "error": oracle_error, "passed": passed})
    return report


def _feasible_trace(
    problem: HomotopyProblem, s: float, spec: ConstraintSpec, rng: np.random.Generator, eta: float
) -> BoundaryTrace:
    """Random trace rescaled so that |grad u(x_hat)| exceeds eta."""
    while True:
        f = _random_trace(problem.mesh, rng)
        value, _ = control_service.constraint_values(problem, s, [f], spec)
        if value > 0.0:
            return f if value > eta else f.scaled(2.0 * eta / value)


def _lipschitz_constants(
    mesh: Mesh,
    gamma0: CoefficientExpr,
    gamma: CoefficientExpr,
    s_samples: Sequence[float],
    pairs: int,
    eta: float,
    seed: int,
    point: Sequence[float],
    options: Optional[SolverOptions],
) -> Dict[str, float]:
    problem = homotopy_service.build_problem(mesh, gamma0, gamma, options)
    spec = _single_point_spec(mesh, point)
    rng = np.random.default_rng(seed)
    kappa_bound = kappa_lipschitz = homogeneity = 0.0

    def norm(trace: BoundaryTrace) -> float:
        return boundary_l2_norm(mesh, trace)

    for s in s_samples:
        for _ in range(pairs):
            f1 = _feasible_trace(problem, s, spec, rng, eta)
            f2 = _feasible_trace(problem, s, spec, rng, eta)
            F1 = control_service.control_functional(problem, s, f1, spec).trace
            F2 = control_service.control_functional(problem, s, f2, spec).trace
            kappa_bound = max(kappa_bound, norm(F1) / norm(f1), norm(F2) / norm(f2))
            gap = norm(f1 - f2)
            if gap > 0.0:
                kappa_lipschitz = max(kappa_lipschitz, norm(F1 - F2) / ((1.0 + norm(f1) + norm(f2)) * gap))
            F_double = control_service.control_functional(problem, s, f1.scaled(2.0), spec).trace
            homogeneity = max(homogeneity, abs(norm(F_double - F1) - norm(F1)) / max(norm(F1), 1.0))
    return {"kappa_bound": kappa_bound, "kappa_lipschitz": kappa_lipschitz, "homogeneity_error": homogeneity}


def _stable(a: float, b: float) -> bool:
    high, low = max(a, b), min(a, b)
    return high <= 1e-12 or (low > 0.0 and high <= STABILITY_FACTOR * low)


def certify_lipschitz_bound(
    mesh: Mesh,
    gamma0: CoefficientExpr,
    gamma: CoefficientExpr,
    s_samples: Sequence[float] = DEFAULT_S_SAMPLES,
    pairs: int = 20,
    eta: float = 0.5,
    seed: int = 0,
    reference_mesh: Optional[Mesh] = None,
    point: Sequence[float] = DEFAULT_POINT,
    options: Optional[SolverOptions] = None,
) -> CertificateReport:
    """Empirical kappa for |F(f)| <= kappa |f| and the local Lipschitz estimate, on this mesh and a coarser one.

    Both constants must be finite and agree within a factor of 4 across the two resolutions. The reference mesh
    defaults to half the resolution.
    """
    reference = reference_mesh or mesh_service.build_structured(max(2, mesh.n_per_side // 2))
    fine = _lipschitz_constants(mesh, gamma0, gamma, s_samples, pairs, eta, seed, point, options)
    coarse = _lipschitz_constants(reference, gamma0, gamma, s_samples, pairs, eta, seed, point, options)

    finite = all(np.isfinite(v) for v in [*fine.values(), *coarse.values()])
    stable = _stable(fine["kappa_bound"], coarse["kappa_bound"]) and _stable(
        fine["kappa_lipschitz"], coarse["kappa_lipschitz"]
    )
    homogeneous = max(fine["homogeneity_error"], coarse["homogeneity_error"]) <= 1e-8
    passed = finite and stable and homogeneous and fine["kappa_bound"] <= KAPPA_LIMIT
    report = CertificateReport(
        name="lipschitz_bound",
        passed=passed,
        measured={
            **fine,
            "reference_kappa_bound": coarse["kappa_bound"],
            "reference_kappa_lipschitz": coarse["kappa_lipschitz"],
            "reference_homogeneity_error": coarse["homogeneity_error"],
        },
        tolerance=STABILITY_FACTOR,
        context=_context(
            mesh,
            gamma0,
            gamma,
            reference_n_per_side=reference.n_per_side,
            s_samples=list(s_samples),
            pairs=pairs,
            eta=eta,
            seed=seed,
            point=list(point),
        ),
    )
    logger.info("Lipschitz certificate", extra={"kappa_bound": fine["kappa_bound"], "passed": passed})
    return report


def certify_sign_guarantee(
    mesh: Mesh,
    trials: int = 50,
    seed: int = 0,
    tolerance: float = DUALITY_TOLERANCE,
    point: Sequence[float] = DEFAULT_POINT,
    options: Optional[SolverOptions] = None,
) -> CertificateReport:
    """grad u . grad v >= -tol |u| |v| for random (f, s, gamma), with gamma = 1 + one random Gaussian bump.

    Also reports max |F(f, s)| / |f| over the same triples.
    """
    rng = np.random.default_rng(seed)
    gamma0 = ConstantCoefficient(value=1.0)
    spec = _single_point_spec(mesh, point)
    loc = spec.points[0]
    worst = np.inf
    kappa = 0.0
    for _ in range(trials):
        bump = Bump(
            amplitude=float(rng.uniform(-0.5, 0.5)),
            center=tuple(rng.uniform(0.2, 0.8, size=2).tolist()),
            width_sq=SIGN_BUMP_WIDTH_SQ,
        )
        gamma = GaussianBumpsCoefficient(base=1.0, bumps=[bump])
        s = float(rng.uniform(0.0, 1.0))
        f = _random_trace(mesh, rng)
        problem = homotopy_service.build_problem(mesh, gamma0, gamma, options)
        operator = problem.operator(s)
        output = control_service.control_functional(problem, s, f, spec)
        u = operator.solve_dirichlet(f)
        v = operator.solve_linearized(problem.K_prime, u, output.trace)
        derivative = float(gradient_at(mesh, u, loc) @ gradient_at(mesh, v, loc))
        scale = max(_nodal_l2(mesh, u.nodal_values) * _nodal_l2(mesh, v.nodal_values), np.finfo(float).tiny)
        worst = min(worst, derivative / scale)
        kappa = max(kappa, boundary_l2_norm(mesh, output.trace) / boundary_l2_norm(mesh, f))

    passed = worst >= -tolerance and kappa <= KAPPA_LIMIT
    report = CertificateReport(
        name="sign_guarantee",
        passed=passed,
        measured={"min_normalized_derivative": float(worst), "kappa_bound": kappa},
        tolerance=tolerance,
        context={
            "n_per_side": mesh.n_per_side,
            "gamma0": gamma0.describe(),
            "gamma": f"1 + random bump, amplitude in [-0.5, 0.5], center in [0.2, 0.8]^2, width^2 {SIGN_BUMP_WIDTH_SQ:g}",
            "trials": trials,
            "seed": seed,
            "point": list(point),
            "norms": NORM_SUBSTITUTION,
        },
    )
    logger.info("Sign certificate", extra={"worst": float(worst), "kappa": kappa, "passed": passed})
    return report


def certify_golden_constants(
    values: Dict[str, float], golden_path: Path, rtol: float = GOLDEN_RTOL
) -> CertificateReport:
    """Record the empirical constants on first run; afterwards every recorded constant must match within rtol."""
    golden: Dict[str, float] = json.loads(golden_path.read_text()) if golden_path.exists() else {}
    deviations: Dict[str, float] = {}
    recorded: List[str] = []
    for key, value in values.items():
        if key not in golden:
            golden[key] = value
            recorded.append(key)
            continue
        reference = golden[key]
        deviations[key] = abs(value - reference) / abs(reference) if reference != 0.0 else abs(value)
    if recorded:
        golden_path.parent.mkdir(parents=True, exist_ok=True)
        golden_path.write_text(json.dumps(golden, indent=2, sort_keys=True) + "\n")
        logger.info(f"Recorded golden constants {recorded} in {golden_path}")

    passed = all(d <= rtol for d in deviations.values())
    return CertificateReport(
        name="golden_constants",
        passed=passed,
        measured={**values, **{f"{k}_deviation": d for k, d in deviations.items()}},
        tolerance=rtol,
        context={"golden_path": str(golden_path), "golden": golden, "newly_recorded": recorded},
    )
