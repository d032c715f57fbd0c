"""Benchmark command line: solve, bench, trace, validate.

Exit codes partition outcomes: 0 converged (and, for ``validate``, within
thresholds), 1 validation failure, 2 nonconvergence, 3 usage or I/O error.
Result documents and CSV outputs are byte-deterministic for a fixed seed
and configuration; bench wall-clock times are zeroed unless ``--wall-time``
is given so that repeated invocations produce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import library
from .core import GameInstance, IterateState, PlayerDualState
from .diagnostics import diagnose
from .solver import GammaPolicy, SigmaSchedule, SolverConfig, solve

RESULT_VERSION = "result/1"

_USAGE_ERROR = 3
_VALIDATION_ERROR = 1
_NONCONVERGED = 2


class CliError(Exception):
    def __init__(self, message: str, code: int = _USAGE_ERROR):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Shared option parsing
# ---------------------------------------------------------------------------


def _add_problem_options(p: argparse.ArgumentParser):
    p.add_argument("--problem", help=f"built-in instance ({', '.join(library.BUILTIN_NAMES)})")
    p.add_argument("--load", help="path to a qgnep/1 instance file")
    p.add_argument("--x0", default="const:0", help="const:<v> | vec:<csv> | file:<path>")


def _add_solver_options(p: argparse.ArgumentParser):
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", default="auto", help="'auto' or a fixed value for every player")
    p.add_argument("--gamma-safety", type=float, default=1.0)
    p.add_argument("--sigma0", type=float, default=None)
    p.add_argument("--sigma-decay", type=float, default=50.0,
                   help="diminishing-schedule decay; 0 selects the constant schedule")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--inner-eps", type=float, default=1e-6)
    p.add_argument("--max-outer", type=int, default=5000)
    p.add_argument("--max-inner", type=int, default=50000)
    p.add_argument("--seed", type=int, default=0)


def _parse_threads(value: str | None) -> int:
    if value is None:
        value = os.environ.get("GNEP_THREADS", "1")
    if value == "auto":
        return os.cpu_count() or 1
    try:
        n = int(value)
    except ValueError as exc:
        raise CliError(f"invalid thread count {value!r}") from exc
    if n < 1:
        raise CliError("thread count must be >= 1")
    return n


def _build_config(args) -> SolverConfig:
    if args.gamma == "auto":
        gamma = GammaPolicy.auto(args.gamma_safety)
    else:
        try:
            gamma = GammaPolicy.fixed(float(args.gamma))
        except ValueError as exc:
            raise CliError(f"--gamma must be 'auto' or a number, got {args.gamma!r}") from exc
    if args.sigma_decay == 0:
        sigma = SigmaSchedule.constant(args.sigma0)
    else:
        sigma = SigmaSchedule.diminishing(args.sigma0, args.sigma_decay)
    try:
        return SolverConfig(alpha=args.alpha, beta=args.beta, gamma=gamma, sigma=sigma,
                            inner_eps=args.inner_eps, outer_tol=args.tol,
                            max_outer=args.max_outer, max_inner=args.max_inner,
                            seed=args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _load_game(args) -> tuple[GameInstance, dict]:
    if bool(args.problem) == bool(args.load):
        raise CliError("exactly one of --problem or --load is required")
    if args.problem:
        try:
            game = library.builtin_instance(args.problem, seed=args.seed)
        except KeyError:
            raise CliError(f"unknown problem {args.problem!r}")
        return game, {"kind": "builtin", "name": args.problem, "seed": args.seed}
    path = Path(args.load)
    if not path.exists():
        raise CliError(f"cannot read instance file {path}")
    try:
        game = library.load_quadratic(path)
    except (library.FormatError, Exception) as exc:
        raise CliError(f"failed to load {path}: {exc}")
    return game, {"kind": "file", "path": str(path)}


def _parse_x0(spec: str, n: int) -> np.ndarray:
    if spec.startswith("const:"):
        try:
            return np.full(n, float(spec[6:]))
        except ValueError:
            raise CliError(f"bad x0 constant in {spec!r}")
    if spec.startswith("vec:"):
        try:
            vals = np.array([float(v) for v in spec[4:].split(",")])
        except ValueError:
            raise CliError(f"bad x0 vector in {spec!r}")
        if vals.shape != (n,):
            raise CliError(f"x0 vector has length {vals.shape[0]}, expected {n}")
        return vals
    if spec.startswith("file:"):
        path = Path(spec[5:])
        if not path.exists():
            raise CliError(f"cannot read x0 file {path}")
        vals = np.array([float(v) for v in path.read_text().replace(",", " ").split()])
        if vals.shape != (n,):
            raise CliError(f"x0 file has {vals.shape[0]} numbers, expected {n}")
        return vals
    raise CliError(f"x0 spec {spec!r} must start with const:, vec:, or file:")


# ---------------------------------------------------------------------------
# Documents
# ---------------------------------------------------------------------------


def _result_document(problem_ref: dict, args, result, game: GameInstance,
                     report=None) -> dict:
    cfgd = {
        "alpha": args.alpha, "beta": args.beta, "gamma": args.gamma,
        "gamma_safety": args.gamma_safety, "sigma0": args.sigma0,
        "sigma_decay": args.sigma_decay, "tol": args.tol,
        "inner_eps": args.inner_eps, "max_outer": args.max_outer,
        "max_inner": args.max_inner, "seed": args.seed, "x0": args.x0,
    }
    doc = {
        "version": RESULT_VERSION,
        "problem": problem_ref,
        "config": cfgd,
        "status": result.status,
        "solution": result.state.x.tolist(),
        "duals": [
            {"z": d.z.tolist(), "lambda": d.lam.tolist(), "mu": d.mu.tolist()}
            for d in result.state.duals
        ],
        "summary": {
            "n": game.n,
            "num_players": game.num_players,
            "m": game.total_constraints,
            "outer_iterations": result.outer_iterations,
            "total_inner_iterations": result.total_inner_iterations,
            "final_residual": result.final_residual,
        },
    }
    if report is not None:
        doc["diagnostics"] = report.as_dict()
    return doc


def _format_float(v: float) -> str:
    return repr(float(v))


def trace_csv_lines(result, num_players: int) -> list[str]:
    header = ("k," + ",".join(f"L_{i + 1}" for i in range(num_players))
              + ",dx_inf,dlambda_inf,feas,inner_iters")
    lines = [header]
    for r in result.trace.rows:
        parts = [str(r.k)]
        parts += [_format_float(v) for v in r.L_values]
        parts += [_format_float(r.dx_inf), _format_float(r.dlambda_inf),
                  _format_float(r.feas), str(r.inner_iters)]
        lines.append(",".join(parts))
    return lines


def _write_text(path: str | None, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# solve / trace
# ---------------------------------------------------------------------------


def cmd_solve(args) -> int:
    if args.format not in ("json", "text"):
        raise CliError(f"--format {args.format!r} is not supported for solve")
    game, ref = _load_game(args)
    cfg = _build_config(args)
    x0 = _parse_x0(args.x0, game.n)
    result = solve(game, x0, cfg)
    report = None
    if not args.skip_diagnostics:
        report = diagnose(game, result.state, cfg.penalty(game.num_players),
                          with_best_response=not args.skip_best_response,
                          br_budget=args.br_budget)
    doc = _result_document(ref, args, result, game, report)
    payload = json.dumps(doc, sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(payload)
    if args.trace:
        _write_text(args.trace, "\n".join(trace_csv_lines(result, game.num_players)) + "\n")
    if args.format == "json" and not args.out:
        print(payload)
    else:
        x = result.state.x
        print(f"problem: {game.name}")
        print(f"status: {result.status}   outer: {result.outer_iterations}   "
              f"inner: {result.total_inner_iterations}   residual: {result.final_residual:.3e}")
        print("solution:", np.array2string(x, precision=6, max_line_width=100))
        if report is not None:
            print(f"worst residual (kkt/gap): {report.worst():.3e}")
    if result.status == "converged":
        return 0
    if result.status in ("max_outer", "stalled-stationary"):
        return _NONCONVERGED
    return _USAGE_ERROR


def cmd_trace(args) -> int:
    game, ref = _load_game(args)
    cfg = _build_config(args)
    x0 = _parse_x0(args.x0, game.n)
    result = solve(game, x0, cfg)
    _write_text(args.out, "\n".join(trace_csv_lines(result, game.num_players)) + "\n")
    return 0 if result.status == "converged" else _NONCONVERGED


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _bench_rows(args) -> list[tuple[str, str]]:
    rows: list[tuple[str, str]] = []
    for spec in args.run or []:
        if "@" not in spec:
            raise CliError(f"--run needs <problem>@<x0spec>, got {spec!r}")
        name, x0spec = spec.split("@", 1)
        rows.append((name, x0spec))
    if args.problem:
        rows.append((args.problem, args.x0))
    if not rows:
        raise CliError("bench needs --run entries or --problem")
    return rows


def _run_bench_row(name: str, x0spec: str, args):
    try:
        row_args = argparse.Namespace(**vars(args))
        row_args.problem, row_args.load, row_args.x0 = name, None, x0spec
        game, _ = _load_game(row_args)
        cfg = _build_config(args)
        x0 = _parse_x0(x0spec, game.n)
        result = solve(game, x0, cfg)
        return {
            "problem": name, "N": game.num_players, "n": game.n,
            "m": game.total_constraints,
            # keep the CSV naively splittable: no commas inside fields
            "x0": x0spec.replace(",", ";"),
            "inner_iters": result.total_inner_iterations,
            "outer_iters": result.outer_iterations,
            "time_s": result.wall_time, "status": result.status,
            "final_residual": result.final_residual,
        }
    except CliError:
        raise
    except Exception as exc:   # per-row isolation: report, do not abort the table
        return {"problem": name, "N": 0, "n": 0, "m": 0, "x0": x0spec,
                "inner_iters": 0, "outer_iters": 0, "time_s": 0.0,
                "status": f"error: {exc}", "final_residual": float("nan")}


_BENCH_COLUMNS = ("problem", "N", "n", "m", "x0", "inner_iters", "outer_iters",
                  "time_s", "status", "final_residual")


def bench_csv_lines(rows: list[dict], wall_time: bool) -> list[str]:
    lines = [",".join(_BENCH_COLUMNS)]
    for r in rows:
        vals = []
        for c in _BENCH_COLUMNS:
            v = r[c]
            if c == "time_s":
                vals.append(f"{v:.3f}" if wall_time else "0.000")
            elif c == "final_residual":
                vals.append(_format_float(v))
            else:
                vals.append(str(v))
        lines.append(",".join(vals))
    return lines


def bench_text_table(rows: list[dict]) -> str:
    cols = list(_BENCH_COLUMNS)
    table = [[str(r[c]) if c != "time_s" else f"{r[c]:.3f}" for c in cols] for r in rows]
    widths = [max(len(cols[i]), *(len(t[i]) for t in table)) if table else len(cols[i])
              for i in range(len(cols))]
    out = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    for t in table:
        out.append("  ".join(v.ljust(w) for v, w in zip(t, widths)))
    return "\n".join(out)


def cmd_bench(args) -> int:
    rows_spec = _bench_rows(args)
    threads = _parse_threads(args.threads)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda rw: _run_bench_row(rw[0], rw[1], args), rows_spec))
    else:
        rows = [_run_bench_row(name, x0spec, args) for name, x0spec in rows_spec]
    csv_text = "\n".join(bench_csv_lines(rows, args.wall_time)) + "\n"
    if args.out:
        Path(args.out).write_text(csv_text)
        print(bench_text_table(rows))
    else:
        sys.stdout.write(csv_text)
        print(bench_text_table(rows))
    return 0 if all(r["status"] == "converged" for r in rows) else _NONCONVERGED


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    path = Path(args.result)
    if not path.exists():
        raise CliError(f"cannot read result document {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: not a valid result document: {exc.msg}")
    if doc.get("version") != RESULT_VERSION:
        raise CliError(f"{path}: field 'version' must be {RESULT_VERSION!r}")
    ref = doc.get("problem", {})
    if ref.get("kind") == "builtin":
        try:
            game = library.builtin_instance(ref["name"], seed=int(ref.get("seed", 0)))
        except KeyError:
            raise CliError(f"unknown problem {ref.get('name')!r}")
    elif ref.get("kind") == "file":
        game = library.load_quadratic(ref["path"])
    else:
        raise CliError(f"{path}: unsupported problem reference {ref!r}")

    x = np.asarray(doc.get("solution", []), dtype=float)
    if x.shape != (game.n,):
        raise CliError(f"{path}: solution has length {x.shape[0]}, expected {game.n}")
    duals = []
    for i, d in enumerate(doc.get("duals", [])):
        lam = np.asarray(d["lambda"], dtype=float)
        if np.any(lam < 0):
            raise CliError(f"{path}: player {i} has a negative multiplier", _USAGE_ERROR)
        duals.append(PlayerDualState(np.asarray(d["z"], dtype=float), lam,
                                     np.asarray(d["mu"], dtype=float)))
    if len(duals) != game.num_players:
        raise CliError(f"{path}: expected {game.num_players} dual blocks")
    state = IterateState(x, duals)

    cfg = doc.get("config", {})
    from .lagrangian import PenaltyParams
    penalty = PenaltyParams.uniform(game.num_players,
                                    float(cfg.get("alpha", 10.0)),
                                    float(cfg.get("beta", 1.0)))
    report = diagnose(game, state, penalty, br_budget=args.br_budget)
    print(f"stationarity:     {max(report.stationarity):.3e}")
    print(f"complementarity:  {max(report.complementarity):.3e}")
    print(f"feasibility:      {max(report.feasibility):.3e}")
    gaps = report.best_response_gaps
    print(f"best-response:    {max(gaps):.3e}")
    print(f"projected grad:   {report.projected_gradient_total:.3e}")
    for note in report.notes:
        print("note:", note)
    ok = report.worst() <= args.threshold
    print("verdict:", "within thresholds" if ok else "EXCEEDS thresholds")
    return 0 if ok else _VALIDATION_ERROR


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gnepsolve",
                                 description="Equilibrium solver benchmark harness")
    sub = ap.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve one instance and write a result document")
    _add_problem_options(ps)
    _add_solver_options(ps)
    ps.add_argument("--trace", help="also write the per-iteration trace CSV here")
    ps.add_argument("--out", help="write the result document (JSON) here")
    ps.add_argument("--format", default="text", choices=["json", "text", "csv"])
    ps.add_argument("--skip-diagnostics", action="store_true")
    ps.add_argument("--skip-best-response", action="store_true")
    ps.add_argument("--br-budget", type=int, default=400_000)
    ps.set_defaults(func=cmd_solve)

    pb = sub.add_parser("bench", help="run a table of instances and emit a summary")
    pb.add_argument("--run", action="append",
                    help="<problem>@<x0spec>; may be repeated")
    _add_problem_options(pb)
    _add_solver_options(pb)
    pb.add_argument("--out", help="CSV output path (default: stdout)")
    pb.add_argument("--threads", default=None, help="row parallelism: n or 'auto'")
    pb.add_argument("--wall-time", action="store_true",
                    help="record measured times (breaks byte determinism)")
    pb.set_defaults(func=cmd_bench)

    pt = sub.add_parser("trace", help="solve and emit the convergence trace CSV")
    _add_problem_options(pt)
    _add_solver_options(pt)
    pt.add_argument("--out", default="-", help="trace CSV path (default: stdout)")
    pt.set_defaults(func=cmd_trace)

    pv = sub.add_parser("validate", help="re-check a result document")
    pv.add_argument("result", help="path to a result/1 document")
    pv.add_argument("--threshold", type=float, default=1e-3)
    pv.add_argument("--br-budget", type=int, default=400_000)
    pv.set_defaults(func=cmd_validate)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except library.FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
