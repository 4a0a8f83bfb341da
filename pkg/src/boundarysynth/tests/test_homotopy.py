import numpy as np
import pytest
from models.control import DETERMINANT_2D, ConstraintKind, ConstraintSpec
from models.fields import BoundaryTrace
from models.homotopy import IntegratorOptions
from services import control_service, homotopy_service, mesh_service
from services.elliptic_service import linear_trace
from utils.errors import ControlError, CriticalPointError, IntegrationError, StepUnderflowError
from utils.helpers import random_fourier_trace

SLACK = 1e-6


def assert_monotone(trajectory, threshold=1.0):
    values = [state.constraint_value for state in trajectory.states]
    s = [state.s for state in trajectory.states]
    assert s[0] == 0.0 and s[-1] == 1.0
    assert all(b > a for a, b in zip(s, s[1:]))
    assert all(b >= a - SLACK for a, b in zip(values, values[1:]))
    assert min(values) >= threshold - SLACK


def spec_for(mesh, kind, points, **kwargs) -> ConstraintSpec:
    return ConstraintSpec(kind=kind, points=[mesh_service.locate(mesh, p) for p in points], **kwargs)


@pytest.mark.unit
def test_stationary_homotopy_keeps_the_data(identity_problem16, center_spec16):
    f0 = homotopy_service.default_initial_traces(identity_problem16.mesh, center_spec16)
    trajectory = homotopy_service.integrate(identity_problem16, f0, center_spec16)
    assert_monotone(trajectory)
    assert trajectory.is_complete
    assert trajectory.rejected_steps == 0
    assert trajectory.state_at(0.5) is not None
    for state in trajectory.states:
        assert state.constraint_value == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(trajectory.final_f[0].values, f0[0].values, atol=1e-12)


@pytest.mark.unit
def test_checkpoints_are_never_stepped_over(identity_problem16, center_spec16):
    f0 = homotopy_service.default_initial_traces(identity_problem16.mesh, center_spec16)
    options = IntegratorOptions(initial_step=0.3, checkpoints=(0.5,))
    trajectory = homotopy_service.integrate(identity_problem16, f0, center_spec16, options)
    np.testing.assert_allclose([state.s for state in trajectory.states], [0.0, 0.3, 0.5, 0.8, 1.0], atol=1e-12)
    assert trajectory.states[2].s == 0.5


@pytest.mark.unit
def test_gaussian_bump_synthesis(bump_problem16, center_spec16):
    f0 = homotopy_service.default_initial_traces(bump_problem16.mesh, center_spec16)
    trajectory = homotopy_service.integrate(bump_problem16, f0, center_spec16)
    assert_monotone(trajectory)
    verification = homotopy_service.verify_final(
        bump_problem16.mesh, bump_problem16.gamma, trajectory.final_f, center_spec16
    )
    assert verification.passed
    assert verification.constraint_value >= 1.0 - SLACK
    assert verification.constraint_value == pytest.approx(trajectory.states[-1].constraint_value, abs=1e-10)


@pytest.mark.unit
def test_run_is_deterministic(bump_problem16, center_spec16):
    f0 = homotopy_service.default_initial_traces(bump_problem16.mesh, center_spec16)
    first = homotopy_service.integrate(bump_problem16, f0, center_spec16)
    second = homotopy_service.integrate(bump_problem16, f0, center_spec16)
    assert [s.s for s in first.states] == [s.s for s in second.states]
    assert np.array_equal(first.states[-1].f, second.states[-1].f)


@pytest.mark.slow
def test_gaussian_bump_synthesis_rk4_fine_mesh(mesh32, unit_expr, bump_expr):
    problem = homotopy_service.build_problem(mesh32, unit_expr, bump_expr)
    spec = spec_for(mesh32, ConstraintKind.SINGLE_GRADIENT, [(0.5, 0.5)])
    f0 = homotopy_service.default_initial_traces(mesh32, spec)
    trajectory = homotopy_service.integrate(problem, f0, spec, IntegratorOptions(method="rk4"))
    assert_monotone(trajectory)
    verification = homotopy_service.verify_final(mesh32, problem.gamma, trajectory.final_f, spec)
    assert verification.constraint_value >= 1.0 - SLACK


@pytest.mark.unit
def test_two_point_synthesis(bump_problem16):
    spec = spec_for(bump_problem16.mesh, ConstraintKind.MULTI_POINT, [(0.3, 0.3), (0.7, 0.7)])
    f0 = homotopy_service.default_initial_traces(bump_problem16.mesh, spec)
    trajectory = homotopy_service.integrate(bump_problem16, f0, spec)
    assert_monotone(trajectory)
    for state in trajectory.states:
        assert np.all(state.point_values >= 1.0 - SLACK)


@pytest.mark.unit
def test_determinant_synthesis(bump_problem16):
    spec = spec_for(bump_problem16.mesh, ConstraintKind.MULTILINEAR, [(0.5, 0.5)], tensor=DETERMINANT_2D)
    f0 = homotopy_service.default_initial_traces(bump_problem16.mesh, spec)
    assert len(f0) == 2
    trajectory = homotopy_service.integrate(bump_problem16, f0, spec)
    assert_monotone(trajectory)
    assert trajectory.states[-1].f.shape == (2, bump_problem16.mesh.boundary_count)


@pytest.mark.slow
@pytest.mark.parametrize(
    "kind,points,kwargs",
    [
        (ConstraintKind.MULTI_POINT, [(0.3, 0.3), (0.7, 0.7)], {}),
        (ConstraintKind.MULTILINEAR, [(0.5, 0.5)], {"tensor": DETERMINANT_2D}),
    ],
)
def test_rk4_needs_no_corrector(mesh32, unit_expr, bump_expr, kind, points, kwargs):
    problem = homotopy_service.build_problem(mesh32, unit_expr, bump_expr)
    spec = spec_for(mesh32, kind, points, **kwargs)
    f0 = homotopy_service.default_initial_traces(mesh32, spec)
    trajectory = homotopy_service.integrate(problem, f0, spec, IntegratorOptions(method="rk4", corrector=False))
    assert_monotone(trajectory)
    assert all(state.correction_norm == 0.0 for state in trajectory.states)


@pytest.mark.slow
def test_euler_without_corrector_underflows_on_two_points(mesh32, unit_expr, bump_expr):
    problem = homotopy_service.build_problem(mesh32, unit_expr, bump_expr)
    spec = spec_for(mesh32, ConstraintKind.MULTI_POINT, [(0.3, 0.3), (0.7, 0.7)])
    f0 = homotopy_service.default_initial_traces(mesh32, spec)
    with pytest.raises(StepUnderflowError):
        homotopy_service.integrate(problem, f0, spec, IntegratorOptions(corrector=False))


def worst_decrease(trajectory) -> float:
    values = [state.constraint_value for state in trajectory.states]
    return max(0.0, *(a - b for a, b in zip(values, values[1:])))


@pytest.mark.unit
def test_halving_the_step_does_not_increase_the_worst_decrease(bump_problem16):
    spec = spec_for(bump_problem16.mesh, ConstraintKind.MULTI_POINT, [(0.3, 0.3), (0.7, 0.7)])
    f0 = homotopy_service.default_initial_traces(bump_problem16.mesh, spec)
    worst = []
    for step in (1.0 / 32.0, 1.0 / 64.0):
        # the guard must not intervene, so the raw predictor drift is measured
        options = IntegratorOptions(initial_step=step, corrector=False, slack_tolerance=0.5)
        trajectory = homotopy_service.integrate(bump_problem16, f0, spec, options)
        assert trajectory.is_complete
        assert trajectory.rejected_steps == 0
        worst.append(worst_decrease(trajectory))
    assert worst[1] <= worst[0] + 1e-13


@pytest.mark.slow
def test_final_gradient_is_stable_under_refinement(bump_problem16, center_spec16, mesh32, unit_expr, bump_expr):
    coarse_f0 = homotopy_service.default_initial_traces(bump_problem16.mesh, center_spec16)
    coarse = homotopy_service.integrate(bump_problem16, coarse_f0, center_spec16)
    problem = homotopy_service.build_problem(mesh32, unit_expr, bump_expr)
    spec = spec_for(mesh32, ConstraintKind.SINGLE_GRADIENT, [(0.5, 0.5)])
    fine = homotopy_service.integrate(problem, homotopy_service.default_initial_traces(mesh32, spec), spec)
    coarse_value = homotopy_service.verify_final(
        bump_problem16.mesh, bump_problem16.gamma, coarse.final_f, center_spec16
    ).constraint_value
    fine_value = homotopy_service.verify_final(mesh32, problem.gamma, fine.final_f, spec).constraint_value
    assert abs(coarse_value - fine_value) <= 0.1


@pytest.mark.unit
def test_stationary_determinant_stays_one(identity_problem16):
    spec = spec_for(identity_problem16.mesh, ConstraintKind.MULTILINEAR, [(0.5, 0.5)], tensor=DETERMINANT_2D)
    f0 = homotopy_service.default_initial_traces(identity_problem16.mesh, spec)
    trajectory = homotopy_service.integrate(identity_problem16, f0, spec)
    for state in trajectory.states:
        assert state.constraint_value == pytest.approx(1.0, abs=1e-10)


@pytest.mark.unit
def test_initial_data_must_satisfy_the_constraint(bump_problem16, center_spec16):
    f0 = [linear_trace(bump_problem16.mesh, "x1").scaled(0.5)]
    with pytest.raises(IntegrationError) as info:
        homotopy_service.integrate(bump_problem16, f0, center_spec16)
    assert info.value.trajectory is not None
    assert info.value.trajectory.states == []


@pytest.mark.unit
def test_control_failure_carries_partial_trajectory(bump_problem16, center_spec16, monkeypatch):
    evaluate = control_service.evaluate_control

    def failing(problem, s, fs, spec):
        if s > 0.25:
            raise ControlError("adjoint flux degenerate")
        return evaluate(problem, s, fs, spec)

    monkeypatch.setattr(control_service, "evaluate_control", failing)
    f0 = homotopy_service.default_initial_traces(bump_problem16.mesh, center_spec16)
    with pytest.raises(IntegrationError) as info:
        homotopy_service.integrate(bump_problem16, f0, center_spec16)
    partial = info.value.trajectory
    assert not partial.is_complete
    assert partial.states[0].s == 0.0
    assert partial.states[-1].s <= 0.25
    assert info.value.state is partial.states[-1]
    assert isinstance(info.value.__cause__, ControlError)


@pytest.mark.unit
def test_step_underflow(bump_problem16, center_spec16, monkeypatch):
    values = control_service.constraint_values

    def dropping(problem, s, fs, spec):
        value, parts = values(problem, s, fs, spec)
        return (value - 1.0, parts - 1.0) if s > 0.0 else (value, parts)

    monkeypatch.setattr(control_service, "constraint_values", dropping)
    f0 = homotopy_service.default_initial_traces(bump_problem16.mesh, center_spec16)
    options = IntegratorOptions(min_step=1e-3)
    with pytest.raises(StepUnderflowError) as info:
        homotopy_service.integrate(bump_problem16, f0, center_spec16, options)
    assert len(info.value.trajectory.states) == 1
    assert info.value.trajectory.rejected_steps == 4


@pytest.mark.unit
def test_step_grows_back_after_a_rejection(identity_problem16, center_spec16, monkeypatch):
    values = control_service.constraint_values
    calls = {"count": 0}

    def reject_first(problem, s, fs, spec):
        value, parts = values(problem, s, fs, spec)
        if s > 0.0:
            calls["count"] += 1
            if calls["count"] == 1:
                return value - 1.0, parts - 1.0
        return value, parts

    monkeypatch.setattr(control_service, "constraint_values", reject_first)
    f0 = homotopy_service.default_initial_traces(identity_problem16.mesh, center_spec16)
    trajectory = homotopy_service.integrate(identity_problem16, f0, center_spec16)
    assert trajectory.rejected_steps == 1
    assert [state.s for state in trajectory.states[:4]] == [0.0, 1 / 128, 2 / 128, 4 / 128]


@pytest.mark.unit
def test_verify_final_recomputes(bump_problem16, center_spec16):
    mesh = bump_problem16.mesh
    f = linear_trace(mesh, "x1")
    report = homotopy_service.verify_final(mesh, bump_problem16.gamma, [f], center_spec16)
    noise = random_fourier_trace(mesh.loop_parameter, mesh.perimeter, np.random.default_rng(3))
    perturbed = f + BoundaryTrace(0.5 * noise)
    other = homotopy_service.verify_final(mesh, bump_problem16.gamma, [perturbed], center_spec16)
    assert other.constraint_value != report.constraint_value


@pytest.mark.unit
def test_verify_final_identity(identity_problem16, center_spec16):
    f = linear_trace(identity_problem16.mesh, "x1")
    report = homotopy_service.verify_final(identity_problem16.mesh, identity_problem16.gamma, [f], center_spec16)
    assert report.constraint_value == pytest.approx(1.0, abs=1e-10)
    assert report.passed


@pytest.mark.unit
def test_naive_scheme_on_stationary_homotopy(identity_problem16, center_spec16):
    f0 = linear_trace(identity_problem16.mesh, "x1")
    samples = homotopy_service.integrate_naive(identity_problem16, f0, center_spec16.points[0])
    assert len(samples) == 65
    assert samples[-1].s == 1.0
    assert all(sample.phi == 1.0 and sample.phi_prime == 0.0 for sample in samples)


@pytest.mark.unit
def test_naive_scheme_on_gaussian_bump(bump_problem16, center_spec16):
    f0 = linear_trace(bump_problem16.mesh, "x1")
    samples = homotopy_service.integrate_naive(bump_problem16, f0, center_spec16.points[0])
    assert len(samples) == 65
    assert samples[0].phi == 1.0
    assert all(np.isfinite(sample.phi_prime) for sample in samples)


@pytest.mark.unit
def test_naive_failure_carries_partial_table(bump_problem16, center_spec16, monkeypatch):
    def critical(problem, s, phi, f0, point):
        if s >= 0.5:
            raise CriticalPointError("naive scheme hit a critical point")
        return 0.0

    monkeypatch.setattr(control_service, "naive_scaling_step", critical)
    f0 = linear_trace(bump_problem16.mesh, "x1")
    with pytest.raises(IntegrationError) as info:
        homotopy_service.integrate_naive(bump_problem16, f0, center_spec16.points[0])
    assert isinstance(info.value.__cause__, CriticalPointError)
    assert len(info.value.partial) == 32
    assert all(sample.s < 0.5 for sample in info.value.partial)
