import csv
import json

import app
import pytest
from services import homotopy_service
from utils.errors import IntegrationError

IDENTITY = """
mesh.n_per_side = 8
coefficient.kind = constant
coefficient.value = 1.0
"""

BUMP = """
mesh.n_per_side = 8
coefficient.kind = gaussian_bumps
coefficient.base = 1.0
coefficient.bumps = [{"amplitude": 0.5, "center": [0.7, 0.3], "width_sq": 0.05}]
"""
BUMP16 = BUMP.replace("n_per_side = 8", "n_per_side = 16")


def write_config(tmp_path, body, name="run.cfg", output="out"):
    path = tmp_path / name
    path.write_text(body + f"output_dir = {tmp_path / output}\n")
    return path


def read_rows(path):
    with path.open() as handle:
        return list(csv.DictReader(handle))


@pytest.mark.unit
def test_empty_configuration_exits_with_config_error(tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("# nothing here\n")
    assert app.main(["synthesize", str(path)]) == app.EXIT_CONFIG


@pytest.mark.unit
def test_missing_configuration_file(tmp_path):
    assert app.main(["synthesize", str(tmp_path / "absent.cfg")]) == app.EXIT_CONFIG


@pytest.mark.unit
def test_boundary_point_exits_with_config_error(tmp_path):
    path = write_config(tmp_path, IDENTITY + "constraint.points = [[1.0, 0.5]]\n")
    assert app.cmd_synthesize(path) == app.EXIT_CONFIG


@pytest.mark.unit
def test_identity_synthesis(tmp_path):
    path = write_config(tmp_path, IDENTITY)
    assert app.main(["--log-level", "warning", "synthesize", str(path)]) == app.EXIT_OK
    out = tmp_path / "out"
    rows = read_rows(out / "trajectory.csv")
    assert rows[0]["s"] == "0" and rows[-1]["s"] == "1"
    assert all(abs(float(row["constraint_value"]) - 1.0) <= 1e-10 for row in rows)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["stage"] == "complete"
    assert summary["format_version"] == 1
    assert summary["final_verification"]["passed"]
    assert (out / "mesh.txt").exists()
    assert (out / "final_trace.txt").read_text().startswith("# loop_parameter f1")
    for s in ("0", "0.5", "1"):
        assert (out / "fields" / f"u1_s{s}.txt").exists()


@pytest.mark.unit
def test_synthesis_is_byte_identical_across_runs(tmp_path):
    first = write_config(tmp_path, BUMP, "a.cfg", "a")
    second = write_config(tmp_path, BUMP, "b.cfg", "b")
    assert app.cmd_synthesize(first) == app.EXIT_OK
    assert app.cmd_synthesize(second) == app.EXIT_OK
    for name in ("trajectory.csv", "final_trace.txt", "fields/u1_s1.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["final_verification"]["constraint_value"] >= 0.999999


@pytest.mark.unit
def test_integration_failure_writes_partial_trajectory(tmp_path):
    path = write_config(tmp_path, BUMP + 'constraint.initial = ["x2"]\nconstraint.threshold = 2.0\n')
    assert app.cmd_synthesize(path) == app.EXIT_INTEGRATION
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["stage"] == "integrate"
    assert summary["trajectory"] == {"states": 0}


@pytest.mark.unit
def test_compare_naive(tmp_path):
    path = write_config(tmp_path, BUMP)
    assert app.cmd_compare_naive(path) == app.EXIT_OK
    rows = read_rows(tmp_path / "out" / "comparison.csv")
    assert len(rows) == 65
    assert rows[0]["phi"] == "1"
    assert all(row["optimal_g_norm"] != "" for row in rows)


@pytest.mark.unit
def test_compare_naive_reports_naive_failure(tmp_path, monkeypatch):
    integrate_naive = homotopy_service.integrate_naive

    def failing(problem, f0, point, options=None):
        samples = integrate_naive(problem, f0, point, options)
        raise IntegrationError("naive scheme hit a critical point", partial=samples[:10])

    monkeypatch.setattr(homotopy_service, "integrate_naive", failing)
    path = write_config(tmp_path, BUMP)
    assert app.cmd_compare_naive(path) == app.EXIT_NAIVE
    assert len(read_rows(tmp_path / "out" / "comparison.csv")) == 10
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["stage"] == "naive_failed"


@pytest.mark.unit
def test_compare_naive_setup_failure_writes_summary(tmp_path):
    path = write_config(tmp_path, IDENTITY.replace("value = 1.0", "value = -1.0"))
    assert app.cmd_compare_naive(path) == app.EXIT_CONFIG
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["stage"] == "setup"
    assert "outside" in summary["error"]
    assert not (tmp_path / "out" / "comparison.csv").exists()


@pytest.mark.unit
def test_compare_naive_is_byte_identical_across_runs(tmp_path):
    assert app.cmd_compare_naive(write_config(tmp_path, BUMP, "a.cfg", "a")) == app.EXIT_OK
    assert app.cmd_compare_naive(write_config(tmp_path, BUMP, "b.cfg", "b")) == app.EXIT_OK
    assert (tmp_path / "a" / "comparison.csv").read_bytes() == (tmp_path / "b" / "comparison.csv").read_bytes()


@pytest.mark.unit
def test_sweep(tmp_path):
    body = IDENTITY + "sweep.key = coefficient.value\nsweep.values = [1.0, 1.5]\n"
    path = write_config(tmp_path, body)
    assert app.main(["sweep", str(path)]) == app.EXIT_OK
    rows = read_rows(tmp_path / "out" / "sweep.csv")
    assert [row["value"] for row in rows] == ["1.0", "1.5"]
    assert all(row["status"] == "ok" and row["exit_code"] == "0" for row in rows)
    assert (tmp_path / "out" / "sweep_1" / "trajectory.csv").exists()
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["sweep_key"] == "coefficient.value"
    assert summary["sweep_base_value"] == 1.0
    assert summary["exit_codes"] == [0, 0]


@pytest.mark.unit
def test_sweep_reports_the_worst_entry(tmp_path):
    body = IDENTITY + 'sweep.key = mesh.n_per_side\nsweep.values = [8, "many"]\n'
    path = write_config(tmp_path, body)
    assert app.cmd_sweep(path) == app.EXIT_CONFIG
    rows = read_rows(tmp_path / "out" / "sweep.csv")
    assert [row["status"] for row in rows] == ["ok", "config_error"]


@pytest.mark.unit
def test_sweep_needs_a_key(tmp_path):
    path = write_config(tmp_path, IDENTITY)
    assert app.cmd_sweep(path) == app.EXIT_CONFIG


CERTIFY = """
certify.s_samples = [0.5]
certify.trials = 3
certify.directions = 8
certify.lipschitz_pairs = 2
certify.sign_trials = 2
certify.competitors = 3
"""


@pytest.mark.slow
def test_certify(tmp_path):
    path = write_config(tmp_path, BUMP16 + CERTIFY)
    assert app.cmd_certify(path) == app.EXIT_OK
    out = tmp_path / "out"
    overview = json.loads((out / "certificates.json").read_text())
    assert overview["passed"]
    assert (out / "certificates" / "duality_s0.5.json").exists()
    assert (out / "golden.json").exists()


@pytest.mark.slow
def test_certify_fails_with_loose_iterative_solver(tmp_path):
    path = write_config(tmp_path, BUMP16 + CERTIFY + "solver.method = cg\nsolver.tol = 1e-6\n")
    assert app.cmd_certify(path) == app.EXIT_CONSTRAINT
    overview = json.loads((tmp_path / "out" / "certificates.json").read_text())
    assert "duality_s0.5" in overview["failed"]


@pytest.mark.unit
def test_sweep_is_byte_identical_across_runs(tmp_path):
    body = BUMP + "sweep.key = coefficient.bumps.0.amplitude\nsweep.values = [0.25, 0.5]\n"
    assert app.cmd_sweep(write_config(tmp_path, body, "a.cfg", "a")) == app.EXIT_OK
    assert app.cmd_sweep(write_config(tmp_path, body, "b.cfg", "b")) == app.EXIT_OK
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()
    for index in (0, 1):
        name = f"sweep_{index}/trajectory.csv"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["sweep_base_value"] == 0.5


@pytest.mark.slow
def test_certificates_are_byte_identical_across_runs(tmp_path):
    assert app.cmd_certify(write_config(tmp_path, BUMP16 + CERTIFY, "a.cfg", "a")) == app.EXIT_OK
    assert app.cmd_certify(write_config(tmp_path, BUMP16 + CERTIFY, "b.cfg", "b")) == app.EXIT_OK
    first, second = tmp_path / "a", tmp_path / "b"
    assert (first / "certificates.json").read_bytes() == (second / "certificates.json").read_bytes()
    names = sorted(p.name for p in (first / "certificates").glob("*.json"))
    assert names == sorted(p.name for p in (second / "certificates").glob("*.json"))
    for name in names:
        a = (first / "certificates" / name).read_bytes()
        b = (second / "certificates" / name).read_bytes()
        if name != "golden_constants.json":
            assert a == b, name
            continue
        # the golden report names its own file
        a_report, b_report = json.loads(a), json.loads(b)
        a_report["context"].pop("golden_path")
        b_report["context"].pop("golden_path")
        assert a_report == b_report
