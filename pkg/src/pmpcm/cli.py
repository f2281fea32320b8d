"""Command line front end.

    pmpcm derive|check|simulate|discover PROBLEM_FILE [--csv PATH] [--seed N]
          [--rtol R] [--atol A] [--report json|text]

Exit codes: 0 success (for ``check``: every candidate conserved), 1 a
negative result or a numeric failure, 2 bad input.  Reports go to stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from typing import Any, Sequence

from . import __version__
from . import expr as ex
from .conservation import DEFAULT_TOL, ConservationVerdict, check_numeric, check_symbolic
from .discovery import DiscoveryResult, discover
from .errors import IntegrationError, NotConcave, NotSolvable, PMPError, ProblemFileError
from .extremal import DEFAULT_ATOL, DEFAULT_RTOL, DEFAULT_SAMPLES, Trajectory, build_field, integrate
from .ocp import build_hamiltonian, eliminate_controls, stationarity_system
from .problemfile import ProblemFile, load

EXIT_OK, EXIT_NEGATIVE, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _verdict_record(name: str, v: ConservationVerdict) -> dict[str, Any]:
    return {
        "name": name,
        "expression": ex.to_text(v.candidate),
        "raw_residual": ex.to_text(v.raw_residual) if v.raw_residual is not None else None,
        "reduced_residual": ex.to_text(v.reduced_residual) if v.reduced_residual is not None else None,
        "status": v.symbolic_status.value if v.symbolic_status is not None else None,
        "reason": v.reason,
        "drift": [
            {"trajectory": d.trajectory_id, "max_abs_drift": d.max_abs_drift, "relative_drift": d.relative_drift}
            for d in v.drift_reports
        ],
        "numeric_pass": v.numeric_pass,
        "tol": v.tol,
    }


def _header(command: str, pf: ProblemFile, seed: int) -> dict[str, Any]:
    return {"tool": "pmpcm", "version": __version__, "command": command, "problem": pf.problem.name, "seed": seed}


def _seed(args, pf: ProblemFile) -> int:
    if args.seed is not None:
        return args.seed
    return pf.discover.seed if pf.discover is not None else 0


def _trajectory(pf: ProblemFile, elim, args) -> Trajectory:
    sim = pf.simulate
    rtol = args.rtol if args.rtol is not None else sim.rtol if sim.rtol is not None else DEFAULT_RTOL
    atol = args.atol if args.atol is not None else sim.atol if sim.atol is not None else DEFAULT_ATOL
    samples = sim.samples if sim.samples is not None else DEFAULT_SAMPLES
    field_ = build_field(pf.problem, elim)
    return integrate(field_, sim.x0, sim.psi_init, sim.span, rtol, atol, samples)


# ---------------------------------------------------------------------------
# subcommands; each returns (exit code, machine record, text lines)


def cmd_derive(pf: ProblemFile, args) -> tuple[int, dict, list[str]]:
    p = pf.problem
    seed = _seed(args, pf)
    H = build_hamiltonian(p)
    grads = stationarity_system(p, H)
    rec = _header("derive", pf, seed)
    lines = [f"problem: {p.name} (n={p.n}, r={p.r}, horizon [{_fmt(p.a)}, {_fmt(p.b)}], psi0={_fmt(p.psi0)})",
             f"H = {ex.to_text(H)}"]
    lines += [f"dH/d{u} = {ex.to_text(g)}" for u, g in zip(p.control_names, grads)]
    rec["hamiltonian"] = ex.to_text(H)
    rec["stationarity"] = [ex.to_text(g) for g in grads]
    try:
        elim = eliminate_controls(p, H, seed)
    except (NotSolvable, NotConcave) as exc:
        rec["elimination"] = None
        rec["elimination_error"] = f"{type(exc).__name__}: {exc}"
        lines.append(f"elimination failed: {type(exc).__name__}: {exc}")
        return EXIT_NEGATIVE, rec, lines
    field_ = build_field(p, elim)
    rec["elimination"] = {u: ex.to_text(e) for u, e in elim.controls.items()}
    rec["reduced_hamiltonian"] = ex.to_text(field_.H_reduced)
    names = [f"d{x}/dt" for x in p.state_names] + [f"d{c}/dt" for c in p.costate_names]
    rec["field"] = {name: ex.to_text(e) for name, e in zip(names, field_.rhs)}
    lines += elim.as_text()
    lines.append(f"H (controls eliminated, psi0={_fmt(p.psi0)}) = {ex.to_text(field_.H_reduced)}")
    lines += [f"{name} = {ex.to_text(e)}" for name, e in zip(names, field_.rhs)]
    return EXIT_OK, rec, lines


def cmd_check(pf: ProblemFile, args) -> tuple[int, dict, list[str]]:
    if not pf.candidates:
        raise InputError("check needs a non-empty [candidates] section")
    p = pf.problem
    seed = _seed(args, pf)
    H = build_hamiltonian(p)
    try:
        elim = eliminate_controls(p, H, seed)
    except (NotSolvable, NotConcave):
        elim = None
    trajectories = []
    if pf.simulate is not None and elim is not None:
        trajectories = [_trajectory(pf, elim, args)]
    rec = _header("check", pf, seed)
    rec["hamiltonian"] = ex.to_text(H)
    rec["candidates"] = []
    lines = [f"problem: {p.name}", f"H = {ex.to_text(H)}"]
    all_ok = True
    for name, F in pf.candidates.items():
        verdict = check_symbolic(F, p, seed, elim, H)
        if trajectories:
            verdict = verdict.merge(check_numeric(F, p, trajectories, DEFAULT_TOL))
        ok = verdict.conserved and verdict.numeric_pass is not False
        all_ok &= ok
        rec["candidates"].append(_verdict_record(name, verdict))
        lines.append(f"candidate {name}: {ex.to_text(F)}")
        lines.append(f"  residual:         {ex.to_text(verdict.raw_residual)}")
        if verdict.reduced_residual is not None:
            lines.append(f"  reduced residual: {ex.to_text(verdict.reduced_residual)}")
        lines.append(f"  status: {verdict.symbolic_status.value}" + (f" ({verdict.reason})" if verdict.reason else ""))
        for d in verdict.drift_reports:
            lines.append(f"  drift on trajectory {d.trajectory_id}: max |dF| = {d.max_abs_drift:.3e}, "
                         f"relative = {d.relative_drift:.3e} (tol {DEFAULT_TOL:g}) "
                         f"{'pass' if d.relative_drift <= DEFAULT_TOL else 'FAIL'}")
    rec["all_conserved"] = all_ok
    return (EXIT_OK if all_ok else EXIT_NEGATIVE), rec, lines


def simulation_csv(pf: ProblemFile, tr: Trajectory) -> str:
    """CSV text: t, x.., u.., psi.., H, then one column per candidate."""
    p = pf.problem
    H = build_hamiltonian(p)
    cols = tr.columns()
    names = list(tr.names)
    exprs = [H] + list(pf.candidates.values())
    fn = ex.compile_exprs(exprs, names, {"psi0": tr.psi0})
    header = ["t", *p.state_names, *p.control_names, *p.costate_names, "H", *pf.candidates]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in cols:
        values = row.tolist()
        w.writerow([_fmt(v) for v in values + fn(values)])
    return buf.getvalue()


def cmd_simulate(pf: ProblemFile, args) -> tuple[int, dict, list[str]]:
    if pf.simulate is None:
        raise InputError("simulate needs a [simulate] section")
    p = pf.problem
    seed = _seed(args, pf)
    H = build_hamiltonian(p)
    elim = eliminate_controls(p, H, seed)
    tr = _trajectory(pf, elim, args)
    text = simulation_csv(pf, tr)
    rec = _header("simulate", pf, seed)
    rec["samples"] = len(tr)
    rec["span"] = [float(tr.t[0]), float(tr.t[-1])]
    rec["integrator"] = {
        "accepted": tr.stats.accepted,
        "rejected": tr.stats.rejected,
        "rhs_evaluations": tr.stats.rhs_evaluations,
        "max_local_error": tr.stats.max_local_error,
    }
    drifts = {}
    for name, F in [("H", H), *pf.candidates.items()]:
        d = check_numeric(F, p, [tr], DEFAULT_TOL).drift_reports[0]
        drifts[name] = {"max_abs_drift": d.max_abs_drift, "relative_drift": d.relative_drift}
    rec["drift"] = drifts
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        rec["csv"] = args.csv
    lines = [f"problem: {p.name}", f"integrated {len(tr)} samples over [{_fmt(tr.t[0])}, {_fmt(tr.t[-1])}]",
             f"steps: {tr.stats.accepted} accepted, {tr.stats.rejected} rejected"]
    lines += [f"drift {name}: relative {d['relative_drift']:.3e}" for name, d in drifts.items()]
    if args.csv:
        lines.append(f"csv written to {args.csv}")
    else:
        rec["csv_text"] = text
    return EXIT_OK, rec, lines


def _discovery_record(res: DiscoveryResult) -> dict[str, Any]:
    return {
        "basis": [ex.to_text(g) for g in res.basis],
        "basis_size": len(res.basis),
        "singular_values": [float(s) for s in res.singular_values],
        "threshold": res.threshold,
        "nullspace_dimension": res.nullspace_dimension,
        "nullspace_basis": [[float(c) for c in v] for v in res.coefficient_vectors],
        "candidates": [
            {
                "expression": ex.to_text(c),
                "coefficients": [str(q) for q in coeffs],
                **{k: v for k, v in _verdict_record("", verdict).items() if k not in ("name", "expression")},
            }
            for c, coeffs, verdict in zip(res.candidates, res.candidate_coefficients, res.verdicts)
        ],
        "dropped": [{"expression": ex.to_text(c), "reason": why} for c, why in res.dropped],
    }


def cmd_discover(pf: ProblemFile, args) -> tuple[int, dict, list[str]]:
    if pf.discover is None:
        raise InputError("discover needs a [discover] section")
    spec = pf.discover
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    res = discover(pf.problem, spec)
    rec = _header("discover", pf, spec.seed)
    rec["family"] = spec.family.value
    rec["discovery"] = _discovery_record(res)
    lines = [f"problem: {pf.problem.name}", f"family: {spec.family.value}, max_t_degree {spec.max_t_degree}",
             f"basis size: {len(res.basis)}", f"nullspace dimension: {res.nullspace_dimension}"]
    for c, coeffs, verdict in zip(res.candidates, res.candidate_coefficients, res.verdicts):
        lines.append(f"candidate: {ex.to_text(c)}  [{verdict.symbolic_status.value}, numeric "
                     f"{'pass' if verdict.numeric_pass else 'fail'}]")
        terms = [f"{q}*({ex.to_text(g)})" for q, g in zip(coeffs, res.basis) if q]
        lines.append("  coefficients: " + " + ".join(terms))
    for c, why in res.dropped:
        lines.append(f"dropped: {ex.to_text(c)} ({why})")
    return EXIT_OK, rec, lines


COMMANDS = {"derive": cmd_derive, "check": cmd_check, "simulate": cmd_simulate, "discover": cmd_discover}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmpcm", description="Pontryagin extremals and constants of the motion")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("problem_file")
    ap.add_argument("--csv", metavar="PATH", help="write simulation samples to PATH")
    ap.add_argument("--seed", type=int, help="seed for zero tests and sampling")
    ap.add_argument("--rtol", type=float, help="integrator relative tolerance")
    ap.add_argument("--atol", type=float, help="integrator absolute tolerance")
    ap.add_argument("--report", choices=("text", "json"), default="text")
    return ap


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    for name in ("rtol", "atol"):
        v = getattr(args, name)
        if v is not None and not v > 0:
            print(f"error: --{name} must be positive", file=stderr)
            return EXIT_INPUT
    started = time.perf_counter()
    try:
        pf = load(args.problem_file)
        code, rec, lines = COMMANDS[args.command](pf, args)
    except OSError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_INPUT
    except ProblemFileError as exc:
        print(f"{args.problem_file}: {exc}", file=stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_INPUT
    except (IntegrationError, NotSolvable, NotConcave) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=stderr)
        return EXIT_NEGATIVE
    except PMPError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=stderr)
        return EXIT_INPUT
    elapsed = time.perf_counter() - started
    if args.report == "json":
        stdout.write(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    else:
        if args.command == "simulate" and not args.csv:
            stdout.write(rec.pop("csv_text"))
            lines.append(f"wall-clock: {elapsed:.3f} s")
            stderr.write("\n".join(lines) + "\n")
            return code
        lines.append(f"pmpcm {__version__}, seed {rec['seed']}, wall-clock {elapsed:.3f} s")
        stdout.write("\n".join(lines) + "\n")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
