"""Command-line harness: flags, artifacts, determinism, exit codes."""

import json

import numpy as np
import pytest

from gnepsolve import library
from gnepsolve.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def test_solve_example3_from_zero(tmp_path, capsys):
    out = tmp_path / "result.json"
    code, stdout, _ = run_cli(
        capsys, "solve", "--problem", "example3", "--x0", "const:0",
        "--tol", "1e-4", "--sigma-decay", "0", "--out", str(out),
        "--skip-best-response")
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["version"] == "result/1"
    assert doc["status"] == "converged"
    np.testing.assert_allclose(doc["solution"], [1.0, 0.0], atol=1e-3)
    assert len(doc["duals"]) == 2
    assert doc["summary"]["m"] == 2


def test_solve_unknown_problem(capsys):
    code, _, stderr = run_cli(capsys, "solve", "--problem", "nosuch")
    assert code == 3
    assert "unknown problem" in stderr


def test_solve_requires_problem_or_load(capsys):
    code, _, stderr = run_cli(capsys, "solve", "--x0", "const:0")
    assert code == 3


def test_solve_bad_x0(capsys):
    code, _, stderr = run_cli(capsys, "solve", "--problem", "example3",
                              "--x0", "vec:1,2,3")
    assert code == 3
    assert "x0" in stderr


def test_solve_fixed_gamma_flag(capsys):
    code, _, _ = run_cli(capsys, "solve", "--problem", "example3",
                         "--x0", "const:0", "--gamma", "40",
                         "--sigma-decay", "0", "--skip-diagnostics")
    assert code == 0


def test_solve_invalid_tolerance(capsys):
    code, _, stderr = run_cli(capsys, "solve", "--problem", "example3",
                              "--tol", "-1")
    assert code == 3


def test_solve_nonconvergence_exit_code(capsys):
    code, _, _ = run_cli(capsys, "solve", "--problem", "example3",
                         "--x0", "const:0", "--max-outer", "3",
                         "--sigma-decay", "0", "--skip-diagnostics")
    assert code == 2


def test_result_documents_byte_deterministic(tmp_path, capsys):
    outs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        code, _, _ = run_cli(
            capsys, "solve", "--problem", "random-quadratic", "--seed", "5",
            "--x0", "const:0", "--sigma-decay", "0", "--out", str(out),
            "--skip-best-response")
        assert code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------


def test_trace_header_and_final_step(tmp_path, capsys):
    out = tmp_path / "trace.csv"
    code, _, _ = run_cli(capsys, "trace", "--problem", "example3",
                         "--x0", "const:0", "--sigma-decay", "0",
                         "--out", str(out))
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "k,L_1,L_2,dx_inf,dlambda_inf,feas,inner_iters"
    last = lines[-1].split(",")
    assert float(last[3]) <= 1e-4 or float(last[4]) <= 1e-4
    # the stopping residual is the max of the two moves
    assert max(float(last[3]), float(last[4])) <= 1e-4


def test_trace_monotone_columns_on_interior_instance(tmp_path, capsys):
    # single-player game whose constraint never activates: the value trace is
    # a strict descent and the emitted columns are nonincreasing
    spec, plant = library.random_quadratic_spec(1, 2, 1, seed=1)
    gpath = tmp_path / "interior.json"
    library.save_quadratic(spec, gpath)
    out = tmp_path / "trace.csv"
    code, _, _ = run_cli(capsys, "trace", "--load", str(gpath),
                         "--x0", "vec:" + ",".join(repr(float(v)) for v in plant),
                         "--sigma-decay", "0", "--out", str(out))
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "k,L_1,dx_inf,dlambda_inf,feas,inner_iters"
    L = np.array([float(l.split(",")[1]) for l in lines[1:]])
    assert np.all(np.diff(L) <= 1e-9)


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

BENCH_ARGS = [
    "bench",
    "--run", "example3@const:0",
    "--run", "example3@vec:2,1",
    "--run", "example3@vec:-1,-1",
    "--run", "a18@const:0",
    "--sigma-decay", "0", "--max-outer", "600",
]


def test_bench_four_rows_and_a18_census(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    code, stdout, _ = run_cli(capsys, *BENCH_ARGS, "--out", str(out))
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("problem,N,n,m,x0,")
    assert len(lines) == 5
    rows = [l.split(",") for l in lines[1:]]
    for r in rows[:3]:
        assert r[0] == "example3" and r[8] == "converged"
    a18 = rows[3]
    assert a18[0] == "a18"
    assert a18[1] == "2" and a18[2] == "12" and a18[3] == "28"
    # the two-company market orbits its degenerate equilibrium set and does
    # not meet the step-based stopping rule; the row reports that honestly
    assert a18[8] in ("max_outer", "stalled-stationary")
    assert code == 2


def test_bench_byte_deterministic(tmp_path, capsys):
    blobs = []
    for name in ("b1.csv", "b2.csv"):
        out = tmp_path / name
        run_cli(capsys, "bench", "--run", "example3@const:0",
                "--run", "random-quadratic@const:0", "--seed", "3",
                "--sigma-decay", "0", "--out", str(out))
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1]
    assert b"time_s" in blobs[0]
    assert b"0.000" in blobs[0]   # wall time zeroed unless requested


def test_x0_from_file(tmp_path, capsys):
    x0file = tmp_path / "start.txt"
    x0file.write_text("2.0, 1.0\n")
    code, _, _ = run_cli(capsys, "solve", "--problem", "example3",
                         "--x0", f"file:{x0file}", "--sigma-decay", "0",
                         "--skip-diagnostics")
    assert code == 0


def test_threads_env_variable(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("GNEP_THREADS", "2")
    out = tmp_path / "env.csv"
    code, _, _ = run_cli(capsys, "bench", "--run", "example3@const:0",
                         "--sigma-decay", "0", "--out", str(out))
    assert code == 0
    assert "converged" in out.read_text()


def test_bench_parallel_rows_match_serial(tmp_path, capsys):
    serial = tmp_path / "serial.csv"
    parallel = tmp_path / "parallel.csv"
    args = ["bench", "--run", "example3@const:0", "--run", "example3@vec:2,1",
            "--sigma-decay", "0"]
    run_cli(capsys, *args, "--out", str(serial), "--threads", "1")
    run_cli(capsys, *args, "--out", str(parallel), "--threads", "2")
    assert serial.read_bytes() == parallel.read_bytes()


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ex3_result_doc(tmp_path_factory):
    out = tmp_path_factory.mktemp("docs") / "ex3.json"
    code = main(["solve", "--problem", "example3", "--x0", "const:0",
                 "--tol", "1e-7", "--sigma-decay", "0", "--out", str(out),
                 "--skip-diagnostics"])
    assert code == 0
    return out


def test_validate_converged_solution(ex3_result_doc, capsys):
    code, stdout, _ = run_cli(capsys, "validate", str(ex3_result_doc))
    assert code == 0
    assert "within thresholds" in stdout


def test_validate_perturbed_solution_fails(ex3_result_doc, tmp_path, capsys):
    doc = json.loads(ex3_result_doc.read_text())
    doc["solution"][0] += 0.1
    bad = tmp_path / "perturbed.json"
    bad.write_text(json.dumps(doc))
    code, stdout, _ = run_cli(capsys, "validate", str(bad))
    assert code == 1
    assert "EXCEEDS" in stdout


def test_validate_rejects_negative_multiplier(ex3_result_doc, tmp_path, capsys):
    doc = json.loads(ex3_result_doc.read_text())
    doc["duals"][0]["lambda"][0] = -0.5
    bad = tmp_path / "negative.json"
    bad.write_text(json.dumps(doc))
    code, _, stderr = run_cli(capsys, "validate", str(bad))
    assert code == 3
    assert "negative multiplier" in stderr


def test_validate_unreadable_input(capsys):
    code, _, stderr = run_cli(capsys, "validate", "/nonexistent/result.json")
    assert code == 3
