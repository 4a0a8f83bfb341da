"""Continuation of boundary data along gamma_s = (1 - s) gamma0 + s gamma.

The optimal scheme integrates ds f = F(f, s) with a monotonicity guard: a step is accepted only if the protected
value did not drop by more than the slack against the previous state and stays above threshold - slack.
Otherwise the step is halved. The minimal-norm corrector removes the predictor's drift at fixed s. Explicit Euler
needs it on the multi-point and multilinear kinds: their control only holds the value level, so the O(h^2)
drift accumulates until the guard underflows. RK4 runs without it.
"""

from typing import List, Optional, Sequence

import numpy as np
from aws_lambda_powertools import Logger
from models.coefficient import CoefficientExpr
from models.control import ConstraintKind, ConstraintSpec, ControlOutput
from models.fields import BoundaryTrace, Coefficient
from models.homotopy import FinalVerification, HomotopyState, IntegratorOptions, NaiveSample, Trajectory
from models.linalg import SolverOptions
from models.mesh import Mesh, PointLocation
from services import coefficient_service, control_service
from services.elliptic_service import HomotopyProblem, linear_trace
from utils.errors import ControlError, CriticalPointError, IntegrationError, StepUnderflowError

logger = Logger()

NAIVE_BLOWUP = 1e12
S_SNAP = 1e-12


def default_initial_traces(mesh: Mesh, spec: ConstraintSpec) -> List[BoundaryTrace]:
    """x1 for gradient constraints; x1, x2, x1, ... for multilinear forms."""
    names = ["x1", "x2"]
    return [linear_trace(mesh, names[i % 2]) for i in range(spec.num_solutions)]  # type: ignore[arg-type]


def _as_array(fs: Sequence[BoundaryTrace]) -> np.ndarray:
    return np.stack([f.values for f in fs])


def _velocity(problem: HomotopyProblem, s: float, fs: np.ndarray, spec: ConstraintSpec) -> np.ndarray:
    output = control_service.evaluate_control(problem, s, [BoundaryTrace(row) for row in fs], spec)
    return _as_array(output.g)


def _predict(
    problem: HomotopyProblem,
    s: float,
    fs: np.ndarray,
    velocity: np.ndarray,
    step: float,
    spec: ConstraintSpec,
    method: str,
) -> np.ndarray:
    if method == "euler":
        return fs + step * velocity
    half = s + 0.5 * step
    k2 = _velocity(problem, half, fs + 0.5 * step * velocity, spec)
    k3 = _velocity(problem, half, fs + 0.5 * step * k2, spec)
    k4 = _velocity(problem, s + step, fs + step * k3, spec)
    return fs + (step / 6.0) * (velocity + 2.0 * k2 + 2.0 * k3 + k4)


def _make_state(
    problem: HomotopyProblem,
    s: float,
    fs: np.ndarray,
    value: float,
    parts: np.ndarray,
    output: ControlOutput,
    step: float,
    correction: float,
) -> HomotopyState:
    record = control_service.to_record(problem, s, output)
    return HomotopyState(
        s=s,
        f=fs,
        constraint_value=value,
        point_values=parts,
        mu=record.mu,
        g_norm=record.g_l2_norm,
        step_size=step,
        branch=output.branch,
        correction_norm=correction,
    )


def integrate(
    problem: HomotopyProblem,
    f0: Sequence[BoundaryTrace],
    spec: ConstraintSpec,
    options: Optional[IntegratorOptions] = None,
) -> Trajectory:
    """Integrate from s = 0 to s = 1; every recorded state satisfies the monotonicity guard.

    Raises:
        IntegrationError: the initial data violates the constraint, or the control functional failed; carries
            the partial trajectory and the last accepted state.
        StepUnderflowError: the guard halved the step below ``min_step``.
    """
    opts = options or IntegratorOptions()
    if len(f0) != spec.num_solutions:
        raise IntegrationError(f"Expected {spec.num_solutions} initial traces, got {len(f0)}")
    trajectory = Trajectory()
    slack = opts.slack_tolerance
    if opts.method == "euler" and not opts.corrector and spec.kind is not ConstraintKind.SINGLE_GRADIENT:
        logger.warning(
            "Explicit Euler without the corrector drifts below the threshold on this constraint kind",
            extra={"kind": spec.kind.value},
        )

    try:
        value, parts = control_service.constraint_values(problem, 0.0, f0, spec)
        if value < spec.threshold - slack:
            raise IntegrationError(
                f"Initial data gives constraint value {value:.6g} below threshold {spec.threshold:g}",
                trajectory=trajectory,
            )
        output = control_service.evaluate_control(problem, 0.0, f0, spec)
    except ControlError as e:
        raise IntegrationError(f"Control evaluation failed at s=0: {e}", trajectory=trajectory) from e

    fs = _as_array(f0)
    trajectory.states.append(_make_state(problem, 0.0, fs, value, parts, output, 0.0, 0.0))
    logger.info(
        "Homotopy started",
        extra={
            "method": opts.method,
            "kind": spec.kind.value,
            "constraint_value": value,
            "stationary": problem.is_stationary,
        },
    )

    stops = sorted({*opts.checkpoints, 1.0})
    s, h = 0.0, opts.initial_step
    halved = False
    while s < 1.0:
        stop = next(c for c in stops if c > s)
        s_new = s + min(h, stop - s)
        if stop - s_new < S_SNAP:
            s_new = stop
        step = s_new - s
        previous = trajectory.states[-1]
        velocity = _as_array(output.g)

        try:
            trial = _predict(problem, s, fs, velocity, step, spec, opts.method)
            correction = 0.0
            if opts.corrector:
                corrected, correction = control_service.restore_constraint(
                    problem,
                    s_new,
                    [BoundaryTrace(row) for row in trial],
                    spec,
                    previous.point_values,
                    opts.corrector_iterations,
                )
                trial = _as_array(corrected)
            value, parts = control_service.constraint_values(problem, s_new, [BoundaryTrace(r) for r in trial], spec)
        except ControlError as e:
            raise IntegrationError(
                f"Control evaluation failed between s={s:.6g} and s={s_new:.6g}: {e}",
                trajectory=trajectory,
                state=previous,
            ) from e

        if value < previous.constraint_value - slack or value < spec.threshold - slack:
            trajectory.rejected_steps += 1
            h = 0.5 * step
            halved = True
            logger.warning(
                "Step rejected by the monotonicity guard",
                extra={"s": s, "step_size": step, "constraint_value": value, "previous": previous.constraint_value},
            )
            if h < opts.min_step:
                raise StepUnderflowError(
                    f"Step size fell below {opts.min_step:g} at s={s:.6g} "
                    f"(constraint value {previous.constraint_value:.6g})",
                    trajectory=trajectory,
                    state=previous,
                )
            continue

        try:
            output = control_service.evaluate_control(problem, s_new, [BoundaryTrace(r) for r in trial], spec)
        except ControlError as e:
            raise IntegrationError(
                f"Control evaluation failed at s={s_new:.6g}: {e}", trajectory=trajectory, state=previous
            ) from e

        s, fs = s_new, trial
        trajectory.states.append(_make_state(problem, s, fs, value, parts, output, step, correction))
        trajectory.accepted_steps += 1
        logger.debug(
            "Step accepted",
            extra={"s": s, "step_size": step, "constraint_value": value, "mu": output.mu, "correction": correction},
        )
        if not halved:
            h = min(opts.initial_step, 2.0 * h)
        halved = False

    logger.info(
        "Homotopy finished",
        extra={
            "accepted": trajectory.accepted_steps,
            "rejected": trajectory.rejected_steps,
            "constraint_value": trajectory.states[-1].constraint_value,
        },
    )
    return trajectory


def verify_final(
    mesh: Mesh,
    gamma: Coefficient,
    f_final: Sequence[BoundaryTrace],
    spec: ConstraintSpec,
    slack_tolerance: float = 1e-6,
    options: Optional[SolverOptions] = None,
) -> FinalVerification:
    """Recompute the protected value at s = 1 with a freshly assembled operator."""
    fresh = HomotopyProblem(mesh, gamma, gamma, options)
    value, parts = control_service.constraint_values(fresh, 1.0, f_final, spec)
    return FinalVerification(
        constraint_value=value,
        point_values=parts.tolist(),
        threshold=spec.threshold,
        slack_tolerance=slack_tolerance,
        passed=value >= spec.threshold - slack_tolerance,
    )


def integrate_naive(
    problem: HomotopyProblem,
    f0: BoundaryTrace,
    point: PointLocation,
    options: Optional[IntegratorOptions] = None,
) -> List[NaiveSample]:
    """Scaling baseline f_s = phi(s) f0 with phi(0) = 1, fixed step ``initial_step``.

    Raises IntegrationError carrying the samples computed so far in ``partial`` when the scheme reaches a
    critical point or phi blows up.
    """
    opts = options or IntegratorOptions()

    def rate(s: float, phi: float) -> float:
        return control_service.naive_scaling_step(problem, s, phi, f0, point)

    samples: List[NaiveSample] = []
    steps = int(np.ceil(1.0 / opts.initial_step - S_SNAP))
    phi = 1.0
    try:
        for k in range(steps + 1):
            s = min(1.0, k * opts.initial_step)
            phi_prime = rate(s, phi)
            samples.append(NaiveSample(s=s, phi=phi, phi_prime=phi_prime))
            if k == steps:
                break
            h = min(1.0, (k + 1) * opts.initial_step) - s
            if opts.method == "euler":
                phi = phi + h * phi_prime
            else:
                k2 = rate(s + 0.5 * h, phi + 0.5 * h * phi_prime)
                k3 = rate(s + 0.5 * h, phi + 0.5 * h * k2)
                k4 = rate(s + h, phi + h * k3)
                phi = phi + (h / 6.0) * (phi_prime + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(phi) or abs(phi) > NAIVE_BLOWUP:
                raise IntegrationError(f"Naive scaling blew up after s={s:.6g} (phi={phi:.3e})", partial=samples)
    except CriticalPointError as e:
        raise IntegrationError(f"Naive scheme stopped at s={s:.6g}: {e}", partial=samples) from e
    logger.info("Naive scaling finished", extra={"phi": phi, "samples": len(samples)})
    return samples


def build_problem(
    mesh: Mesh,
    gamma0: CoefficientExpr,
    gamma: CoefficientExpr,
    options: Optional[SolverOptions] = None,
) -> HomotopyProblem:
    return HomotopyProblem(
        mesh, coefficient_service.evaluate(gamma0, mesh), coefficient_service.evaluate(gamma, mesh), options
    )

