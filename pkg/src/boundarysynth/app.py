import os

os.environ.setdefault("POWERTOOLS_SERVICE_NAME", "boundarysynth")

import argparse  # noqa: E402
import copy  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from concurrent.futures import ProcessPoolExecutor  # noqa: E402
from pathlib import Path  # noqa: E402
from typing import Any, Dict, List, Optional, Sequence, Tuple  # noqa: E402

from aws_lambda_powertools import Logger  # noqa: E402
from models.certificate import CertificateReport  # noqa: E402
from models.config import RunConfig, read_config_text  # noqa: E402
from models.control import ConstraintKind, ConstraintSpec  # noqa: E402
from models.fields import BoundaryTrace  # noqa: E402
from models.homotopy import Trajectory  # noqa: E402
from models.mesh import Mesh  # noqa: E402
from services import homotopy_service, mesh_service, verify_service  # noqa: E402
from services.elliptic_service import HomotopyProblem, linear_trace  # noqa: E402
from utils.errors import (  # noqa: E402
    CoefficientError,
    ConfigError,
    ControlError,
    IntegrationError,
    MeshError,
    SynthesisError,
)
from utils.helpers import get_nested_value, parse_dotted_config, set_nested_value  # noqa: E402
from utils.writers import (  # noqa: E402
    write_certificate,
    write_comparison,
    write_field,
    write_final_trace,
    write_json,
    write_summary,
    write_sweep,
    write_trajectory,
)

logger = Logger()

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CONSTRAINT = 2
EXIT_INTEGRATION = 3
EXIT_NAIVE = 4
FIELD_DUMP_S = (0.0, 0.5, 1.0)
SWEEP_STATUS = {
    EXIT_OK: "ok",
    EXIT_CONFIG: "config_error",
    EXIT_CONSTRAINT: "constraint_failed",
    EXIT_INTEGRATION: "integration_failed",
}


def _setup(config: RunConfig) -> Tuple[Mesh, HomotopyProblem, ConstraintSpec, List[BoundaryTrace]]:
    """Mesh, coefficients, constraint and initial traces; any failure here is a configuration error."""
    try:
        mesh = mesh_service.build_structured(config.mesh.n_per_side)
        problem = homotopy_service.build_problem(mesh, config.reference, config.coefficient, config.solver)
        spec = config.constraint.to_spec(mesh)
    except (MeshError, CoefficientError, ControlError) as e:
        raise ConfigError(str(e)) from e
    if config.constraint.initial:
        f0 = [linear_trace(mesh, name) for name in config.constraint.initial]
    else:
        f0 = homotopy_service.default_initial_traces(mesh, spec)
    logger.info("Run prepared", extra={"mesh": mesh.describe(), "gamma": problem.gamma.description})
    return mesh, problem, spec, f0


def _run_metadata(config: RunConfig, mesh: Optional[Mesh] = None) -> Dict[str, Any]:
    return {
        "config": config.model_dump(mode="json"),
        "mesh": mesh.describe() if mesh is not None else {"n_per_side": config.mesh.n_per_side},
        "coefficient": config.coefficient.describe(),
        "reference": config.reference.describe(),
    }


def _trajectory_summary(trajectory: Optional[Trajectory]) -> Dict[str, Any]:
    if trajectory is None or trajectory.last is None:
        return {"states": 0}
    return {
        "states": len(trajectory.states),
        "accepted_steps": trajectory.accepted_steps,
        "rejected_steps": trajectory.rejected_steps,
        "last_s": trajectory.last.s,
        "last_constraint_value": trajectory.last.constraint_value,
    }


def _dump_fields(out: Path, mesh: Mesh, problem: HomotopyProblem, trajectory: Trajectory) -> None:
    for s in FIELD_DUMP_S:
        state = trajectory.state_at(s)
        if state is None:
            continue
        operator = problem.operator(s)
        for i, trace in enumerate(state.traces):
            write_field(out / "fields" / f"u{i + 1}_s{s:g}.txt", mesh, operator.solve_dirichlet(trace))


def run_synthesis(config: RunConfig) -> Tuple[int, Optional[float]]:
    """Integrate, verify and write every synthesis artifact; returns the exit code and the verified value."""
    out = config.output_path
    out.mkdir(parents=True, exist_ok=True)
    summary_path = out / "summary.json"
    try:
        mesh, problem, spec, f0 = _setup(config)
    except ConfigError as e:
        logger.exception("Invalid run configuration")
        write_summary(summary_path, "setup", error=str(e), **_run_metadata(config))
        return EXIT_CONFIG, None
    mesh_service.dump_mesh(mesh, out / "mesh.txt")

    try:
        trajectory = homotopy_service.integrate(problem, f0, spec, config.integrator)
    except SynthesisError as e:
        logger.exception("Homotopy integration failed")
        partial = e.trajectory if isinstance(e, IntegrationError) else None
        if partial is not None:
            write_trajectory(out / "trajectory.csv", partial)
        write_summary(
            summary_path,
            "integrate",
            error=str(e),
            trajectory=_trajectory_summary(partial),
            **_run_metadata(config, mesh),
        )
        return EXIT_INTEGRATION, None

    verification = homotopy_service.verify_final(
        mesh, problem.gamma, trajectory.final_f, spec, config.integrator.slack_tolerance, config.solver
    )
    write_trajectory(out / "trajectory.csv", trajectory)
    write_final_trace(out / "final_trace.txt", mesh, trajectory)
    _dump_fields(out, mesh, problem, trajectory)
    write_summary(
        summary_path,
        "complete" if verification.passed else "verify",
        trajectory=_trajectory_summary(trajectory),
        final_verification=verification.model_dump(),
        **_run_metadata(config, mesh),
    )
    logger.info("Synthesis finished", extra={"final": verification.constraint_value, "passed": verification.passed})
    return (EXIT_OK if verification.passed else EXIT_CONSTRAINT), verification.constraint_value


def _load(config_path: Path) -> RunConfig:
    return RunConfig.from_file(config_path)


def cmd_synthesize(config_path: Path) -> int:
    logger.append_keys(subcommand="synthesize")
    try:
        config = _load(config_path)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}", extra={"stage": "config"})
        return EXIT_CONFIG
    code, _ = run_synthesis(config)
    return code


def _certificates(config: RunConfig, mesh: Mesh) -> List[CertificateReport]:
    point = config.constraint.points[0]
    common = {"point": point, "options": config.solver}
    gamma0, gamma = config.reference, config.coefficient
    certify = config.certify
    reports = []
    for s in certify.s_samples:
        reports.append(
            verify_service.certify_duality(
                mesh, gamma0, gamma, s, certify.trials, config.seed, certify.duality_tolerance, **common
            )
        )
        reports.append(
            verify_service.certify_kkt_optimality(
                mesh, gamma0, gamma, s, competitors=certify.competitors, seed=config.seed, **common
            )
        )
    injectivity = verify_service.certify_injectivity_constants(
        mesh, gamma0, gamma, certify.s_samples, certify.directions, **common
    )
    lipschitz = verify_service.certify_lipschitz_bound(
        mesh, gamma0, gamma, certify.s_samples, certify.lipschitz_pairs, certify.eta, config.seed, **common
    )
    sign = verify_service.certify_sign_guarantee(mesh, certify.sign_trials, config.seed, **common)
    golden = verify_service.certify_golden_constants(
        {
            "rho_hat": injectivity.measured["rho_hat"],
            "eta_hat": injectivity.measured["eta_hat"],
            "kappa_bound": lipschitz.measured["kappa_bound"],
            "kappa_lipschitz": lipschitz.measured["kappa_lipschitz"],
        },
        config.golden_path,
    )
    return [*reports, injectivity, lipschitz, sign, golden]


def cmd_certify(config_path: Path) -> int:
    logger.append_keys(subcommand="certify")
    try:
        config = _load(config_path)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}", extra={"stage": "config"})
        return EXIT_CONFIG

    out = config.output_path
    out.mkdir(parents=True, exist_ok=True)
    try:
        mesh = mesh_service.build_structured(config.mesh.n_per_side)
    except MeshError as e:
        logger.exception("Invalid mesh")
        write_summary(out / "summary.json", "setup", error=str(e), **_run_metadata(config))
        return EXIT_CONFIG
    try:
        reports = _certificates(config, mesh)
    except CoefficientError as e:
        logger.exception("Invalid coefficient")
        write_summary(out / "summary.json", "setup", error=str(e), **_run_metadata(config, mesh))
        return EXIT_CONFIG
    except SynthesisError as e:
        logger.exception("Certificate evaluation failed")
        write_summary(out / "summary.json", "certify", error=str(e), **_run_metadata(config, mesh))
        return EXIT_CONSTRAINT

    for report in reports:
        write_certificate(out / "certificates", report)
    failed = [r.name for r in reports if not r.passed]
    write_json(
        out / "certificates.json",
        {
            "passed": not failed,
            "failed": failed,
            "certificates": {r.name: {"passed": r.passed, "measured": r.measured} for r in reports},
        },
    )
    write_summary(out / "summary.json", "complete", failed=failed, **_run_metadata(config, mesh))
    if failed:
        logger.error(f"Certificates failed: {', '.join(failed)}")
        return EXIT_CONSTRAINT
    logger.info(f"All {len(reports)} certificates passed")
    return EXIT_OK


def cmd_compare_naive(config_path: Path) -> int:
    logger.append_keys(subcommand="compare-naive")
    try:
        config = _load(config_path)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}", extra={"stage": "config"})
        return EXIT_CONFIG

    out = config.output_path
    out.mkdir(parents=True, exist_ok=True)
    try:
        mesh, problem, spec, f0 = _setup(config)
    except ConfigError as e:
        logger.exception("Invalid run configuration")
        write_summary(out / "summary.json", "setup", error=str(e), **_run_metadata(config))
        return EXIT_CONFIG
    point = spec.points[0]
    single = ConstraintSpec(kind=ConstraintKind.SINGLE_GRADIENT, points=[point], threshold=spec.threshold)
    try:
        trajectory = homotopy_service.integrate(problem, f0[:1], single, config.integrator)
    except SynthesisError as e:
        logger.exception("Optimal scheme failed")
        write_summary(out / "summary.json", "optimal", error=str(e), **_run_metadata(config, mesh))
        return EXIT_INTEGRATION

    naive_error: Optional[str] = None
    try:
        samples = homotopy_service.integrate_naive(problem, f0[0], point, config.integrator)
    except IntegrationError as e:
        logger.exception("Naive scheme failed")
        samples, naive_error = e.partial or [], str(e)

    write_comparison(out / "comparison.csv", samples, trajectory)
    write_summary(
        out / "summary.json",
        "naive_failed" if naive_error else "complete",
        naive_error=naive_error,
        naive_final_phi=samples[-1].phi if samples else None,
        trajectory=_trajectory_summary(trajectory),
        **_run_metadata(config, mesh),
    )
    return EXIT_NAIVE if naive_error else EXIT_OK


def _sweep_entry(task: Tuple[int, Dict[str, Any]]) -> Tuple[int, Optional[float]]:
    index, mapping = task
    try:
        config = RunConfig.from_mapping(mapping)
    except ConfigError as e:
        logger.error(f"Sweep entry {index} is invalid: {e}")
        return EXIT_CONFIG, None
    return run_synthesis(config)


def cmd_sweep(config_path: Path, jobs: int = 1) -> int:
    logger.append_keys(subcommand="sweep")
    try:
        mapping = parse_dotted_config(read_config_text(config_path))
        config = RunConfig.from_mapping(mapping)
        if not config.sweep.key or not config.sweep.values:
            raise ConfigError("A sweep needs sweep.key and a non-empty sweep.values", key="sweep")
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}", extra={"stage": "config"})
        return EXIT_CONFIG

    base = config.output_path
    path = config.sweep.key.split(".")
    base_value = get_nested_value(mapping, path)
    logger.info(
        f"Sweeping {config.sweep.key} over {len(config.sweep.values)} values",
        extra={"base_value": base_value, "jobs": jobs},
    )
    tasks = []
    for index, value in enumerate(config.sweep.values):
        entry = copy.deepcopy(mapping)
        entry.pop("sweep", None)
        try:
            set_nested_value(entry, path, value)
        except ConfigError as e:
            logger.error(f"Invalid configuration: {e}", extra={"stage": "config"})
            return EXIT_CONFIG
        entry["output_dir"] = str(base / f"sweep_{index}")
        tasks.append((index, entry))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_entry, tasks))
    else:
        results = [_sweep_entry(task) for task in tasks]

    rows = [
        [index, json.dumps(value), SWEEP_STATUS.get(code, "failed"), "" if final is None else final, code]
        for index, (value, (code, final)) in enumerate(zip(config.sweep.values, results))
    ]
    write_sweep(base / "sweep.csv", rows)
    codes = [code for code, _ in results]
    write_summary(
        base / "summary.json", "complete", sweep_key=config.sweep.key, sweep_base_value=base_value, exit_codes=codes
    )
    return max(codes)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boundarysynth", description="Synthesize boundary data keeping solution gradients away from zero"
    )
    parser.add_argument("--log-level", default=None, help="Overrides POWERTOOLS_LOG_LEVEL, f. ex. DEBUG")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("synthesize", "Integrate the homotopy and verify the final boundary data"),
        ("certify", "Run the numerical certificate suite"),
        ("compare-naive", "Compare the naive scaling scheme with the optimal one"),
        ("sweep", "Run one synthesis per value of sweep.key"),
    ]:
        command = commands.add_parser(name, help=help_text)
        command.add_argument("config", type=Path, help="Path to the dotted-key run configuration")
        if name == "sweep":
            command.add_argument("--jobs", type=int, default=1, help="Parallel sweep entries")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        logger.setLevel(args.log_level.upper())
    if args.command == "synthesize":
        return cmd_synthesize(args.config)
    if args.command == "certify":
        return cmd_certify(args.config)
    if args.command == "compare-naive":
        return cmd_compare_naive(args.config)
    return cmd_sweep(args.config, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
