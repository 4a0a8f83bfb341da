"""Artifact writers. Every number goes through ``format_number`` so repeated runs produce identical bytes."""

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np
from models.certificate import CertificateReport
from models.fields import Field
from models.homotopy import NaiveSample, Trajectory
from models.mesh import Mesh
from utils.helpers import format_number

FORMAT_VERSION = 1
TRAJECTORY_COLUMNS = ["s", "constraint_value", "mu", "g_l2_norm", "step_size", "branch"]
COMPARISON_COLUMNS = ["s", "phi", "phi_prime", "optimal_g_norm", "optimal_constraint"]
SWEEP_COLUMNS = ["index", "value", "status", "final_constraint", "exit_code"]


def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format_number(value)
    return str(value)


def _write_csv(path: Path, columns: List[str], rows: Iterable[Sequence[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (float, np.floating)):
        number = float(value)
        return float(format_number(number)) if np.isfinite(number) else str(number)
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def write_trajectory(path: Path, trajectory: Trajectory) -> None:
    rows = (
        [state.s, state.constraint_value, state.mu, state.g_norm, state.step_size, state.branch.value]
        for state in trajectory.states
    )
    _write_csv(path, TRAJECTORY_COLUMNS, rows)


def write_final_trace(path: Path, mesh: Mesh, trajectory: Trajectory) -> None:
    """Loop parameter followed by one column per solution of the last accepted state."""
    state = trajectory.last
    if state is None:
        return
    lines = ["# loop_parameter " + " ".join(f"f{i + 1}" for i in range(state.f.shape[0]))]
    for k, t in enumerate(mesh.loop_parameter):
        lines.append(" ".join([format_number(t), *(format_number(v) for v in state.f[:, k])]))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def write_field(path: Path, mesh: Mesh, u: Field) -> None:
    """Vertex coordinates and nodal values, one vertex per line."""
    lines = ["# x y u"]
    for (x, y), value in zip(mesh.vertices, u.nodal_values):
        lines.append(f"{format_number(x)} {format_number(y)} {format_number(value)}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def write_comparison(path: Path, samples: Sequence[NaiveSample], trajectory: Trajectory) -> None:
    """Naive samples joined with the optimal trajectory, interpolated linearly in s between accepted states."""
    s_opt = np.array([state.s for state in trajectory.states])
    g_opt = np.array([state.g_norm for state in trajectory.states])
    c_opt = np.array([state.constraint_value for state in trajectory.states])
    rows = []
    for sample in samples:
        if s_opt.size and sample.s <= s_opt[-1]:
            g, c = float(np.interp(sample.s, s_opt, g_opt)), float(np.interp(sample.s, s_opt, c_opt))
            rows.append([sample.s, sample.phi, sample.phi_prime, g, c])
        else:
            rows.append([sample.s, sample.phi, sample.phi_prime, "", ""])
    _write_csv(path, COMPARISON_COLUMNS, rows)


def write_certificate(directory: Path, report: CertificateReport) -> Path:
    path = directory / f"{report.name}.json"
    write_json(path, report.model_dump(mode="json"))
    return path


def write_sweep(path: Path, rows: Sequence[Sequence[Any]]) -> None:
    _write_csv(path, SWEEP_COLUMNS, rows)


def write_summary(path: Path, stage: str, **fields: Any) -> None:
    write_json(path, {"format_version": FORMAT_VERSION, "stage": stage, **fields})
