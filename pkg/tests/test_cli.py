import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from pmpcm import expr as ex
from pmpcm.cli import run
from pmpcm.discovery import Family
from pmpcm.errors import ProblemFileError
from pmpcm.ocp import Box
from pmpcm.problemfile import loads

from helpers import EQ8, proportional

ROOT = Path(__file__).resolve().parents[1]
PROBLEMS = ROOT / "problems"
P = ex.parse

QUARTIC_H = "psi0*(u1^2+u2^2) + psi1*x3 + psi2*x4 + psi3*(-x1*(x1^2+x2^2)+u1) + psi4*(-x2*(x1^2+x2^2)+u2)"


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run([str(a) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


def write(tmp_path, text, name="p.ocp"):
    path = tmp_path / name
    path.write_text(text)
    return path


def quartic_with(candidates: str, simulate: bool = False) -> str:
    text = (PROBLEMS / "quartic.ocp").read_text()
    head = text.split("[candidates]")[0]
    tail = "[simulate]" + text.split("[simulate]")[1] if simulate else ""
    return head + candidates + "\n" + tail


# derive


def test_derive_prints_quartic_hamiltonian():
    code, out, _ = call("derive", PROBLEMS / "quartic.ocp")
    assert code == 0
    line = next(l for l in out.splitlines() if l.startswith("H = "))
    assert P(line[4:]) == P(QUARTIC_H)


def test_derive_json_fields():
    code, out, _ = call("derive", PROBLEMS / "quartic.ocp", "--report", "json")
    rec = json.loads(out)
    assert code == 0
    assert P(rec["hamiltonian"]) == P(QUARTIC_H)
    assert [P(s) for s in rec["stationarity"]] == [P("2*psi0*u1 + psi3"), P("2*psi0*u2 + psi4")]
    assert P(rec["field"]["dx3/dt"]) == P("-x1*(x1^2 + x2^2) + psi3/2")


def test_derive_scalar_elimination():
    code, out, _ = call("derive", PROBLEMS / "scalar.ocp")
    assert code == 0
    assert "u1 = -psi1/(2*psi0)" in out.splitlines()


def test_derive_dimension_mismatch(tmp_path):
    text = (PROBLEMS / "quartic.ocp").read_text().replace("    -x2*(x1^2 + x2^2) + u2\n", "")
    code, out, err = call("derive", write(tmp_path, text))
    assert code == 2 and out == ""
    assert "DimensionMismatch" in err and "line 9" in err


def test_derive_not_solvable(tmp_path):
    text = "[problem]\nname = q\nstates = 1\ncontrols = 1\nt0 = 0\nt1 = 1\nlagrangian = u1^4\ndynamics = u1\n"
    code, out, _ = call("derive", write(tmp_path, text))
    assert code == 1 and "NotSolvable" in out


# check


def test_check_quartic_candidate():
    code, out, _ = call("check", PROBLEMS / "quartic.ocp")
    assert code == 0
    assert "status: ConservedSymbolically" in out
    assert "reduced residual: 0" in out


def test_check_non_invariant(tmp_path):
    code, out, _ = call("check", write(tmp_path, quartic_with("[candidates]\nbad = psi1*x1\n")))
    assert code == 1
    assert "NonzeroResidual" in out
    reduced = next(l for l in out.splitlines() if "reduced residual:" in l).split(":", 1)[1]
    assert not ex.is_zero(P(reduced))


def test_check_without_candidates(tmp_path):
    code, _, err = call("check", write(tmp_path, quartic_with("")))
    assert code == 2 and "candidates" in err


def test_check_with_simulation_reports_drift(tmp_path):
    code, out, _ = call("check", write(tmp_path, quartic_with(f"[candidates]\nrot = {EQ8}\n", simulate=True)),
                        "--report", "json")
    rec = json.loads(out)
    assert code == 0 and rec["all_conserved"]
    (cand,) = rec["candidates"]
    assert cand["status"] == "ConservedSymbolically" and cand["numeric_pass"]
    assert cand["drift"][0]["relative_drift"] <= 1e-7


@pytest.mark.parametrize("name, code", [("bilinear", 0), ("scaling", 0), ("cubics_homogeneous", 0),
                                        ("cubics_quadratic", 1)])
def test_check_sample_files(name, code):
    assert call("check", PROBLEMS / f"{name}.ocp")[0] == code


# simulate


def test_scalar_csv(tmp_path):
    path = tmp_path / "out.csv"
    code, out, _ = call("simulate", PROBLEMS / "scalar.ocp", "--csv", path)
    assert code == 0 and "csv written" in out
    rows = list(csv.reader(path.read_text().splitlines()))
    assert rows[0] == ["t", "x1", "u1", "psi1", "H", "costate"]
    assert len(rows) == 6
    for row in rows[1:]:
        assert float(row[4]) == pytest.approx(1.0, abs=1e-12)
        assert float(row[1]) == pytest.approx(float(row[0]), abs=1e-9)


def test_csv_round_trips_bit_exactly(tmp_path):
    path = tmp_path / "out.csv"
    call("simulate", PROBLEMS / "quartic.ocp", "--csv", path)
    lines = path.read_text().splitlines()
    assert len(lines) == 201
    for line in lines[1:]:
        for field in line.split(","):
            assert f"{float(field):.17g}" == field


def test_quartic_candidate_column_is_constant(tmp_path):
    path = tmp_path / "out.csv"
    call("simulate", PROBLEMS / "quartic.ocp", "--csv", path)
    rows = list(csv.reader(path.read_text().splitlines()))
    k = rows[0].index("rotation")
    values = [float(r[k]) for r in rows[1:]]
    assert max(abs(v - values[0]) for v in values) / (1 + abs(values[0])) <= 1e-7


def test_simulate_without_csv_path_writes_csv_to_stdout():
    code, out, err = call("simulate", PROBLEMS / "scalar.ocp")
    assert code == 0
    assert out.splitlines()[0] == "t,x1,u1,psi1,H,costate"
    assert "samples" in err


def test_simulate_needs_section(tmp_path):
    code, _, err = call("simulate", write(tmp_path, quartic_with("")))
    assert code == 2 and "simulate" in err


def test_tolerance_flags_are_validated():
    assert call("simulate", PROBLEMS / "scalar.ocp", "--rtol", "0")[0] == 2


# discover


def test_discover_quartic():
    code, out, _ = call("discover", PROBLEMS / "quartic.ocp", "--report", "json")
    rec = json.loads(out)["discovery"]
    assert code == 0 and rec["basis_size"] == 16
    assert any(proportional(P(c["expression"]), P(EQ8)) for c in rec["candidates"])


def test_discover_cubics():
    rec = json.loads(call("discover", PROBLEMS / "cubics_homogeneous.ocp", "--report", "json")[1])
    assert "psi1*x1 + psi2*x2" in [c["expression"] for c in rec["discovery"]["candidates"]]
    rec = json.loads(call("discover", PROBLEMS / "cubics_quadratic.ocp", "--report", "json")[1])
    assert "psi1*x1 + psi2*x2" not in [c["expression"] for c in rec["discovery"]["candidates"]]


def test_reports_are_byte_identical_across_processes():
    outs = []
    for hashseed in ("1", "2"):
        proc = subprocess.run(
            [sys.executable, "-m", "pmpcm", "discover", str(PROBLEMS / "quartic.ocp"), "--report", "json"],
            capture_output=True, env={"PYTHONHASHSEED": hashseed, "PATH": "/usr/bin:/bin"}, check=True,
        )
        outs.append(proc.stdout)
    assert outs[0] == outs[1]


def test_text_report_ends_with_run_metadata():
    out = call("check", PROBLEMS / "quartic.ocp", "--seed", "4")[1]
    assert out.splitlines()[-1].startswith("pmpcm 0.1.0, seed 4, wall-clock")


def test_missing_file():
    assert call("derive", "/nonexistent/problem.ocp")[0] == 2


# problem files

BASE = "[problem]\nname = s\nstates = 1\ncontrols = 1\nt0 = 0\nt1 = 1\nlagrangian = u1^2\ndynamics = u1\n"


def test_loads_minimal():
    pf = loads(BASE)
    assert pf.problem.n == 1 and pf.candidates == {} and pf.simulate is None and pf.discover is None


def test_continuation_lines_and_lists():
    pf = loads((PROBLEMS / "quartic.ocp").read_text())
    assert len(pf.problem.phi) == 4
    assert pf.simulate.x0 == (1.0, 0.0, 0.0, 0.5) and pf.simulate.span == (0.0, 5.0)
    assert pf.discover.family is Family.BILINEAR_PSI_X


def test_syntax_error_location():
    with pytest.raises(ProblemFileError) as info:
        loads(BASE.replace("lagrangian = u1^2", "lagrangian = u1^2 + * 3"))
    assert (info.value.line, info.value.column) == (7, 21)


def test_error_location_on_continuation_line():
    text = BASE.replace("states = 1", "states = 2").replace("dynamics = u1", "dynamics = u1\n    x1 +")
    with pytest.raises(ProblemFileError) as info:
        loads(text)
    assert info.value.line == 9 and info.value.column == 9


@pytest.mark.parametrize(
    "extra, fragment",
    [
        ("colour = red\n", "unknown key"),
        ("[extras]\n", "unknown section"),
        ("[simulate]\nx0 = 0\n", "psi_init"),
        ("[simulate]\nx0 = 0, 1\npsi_init = 1\n", "x0 needs 1"),
        ("[simulate]\nx0 = zero\npsi_init = 1\n", "expected a number"),
        ("[discover]\nfamily = Cubic\n", "family must be"),
        ("[candidates]\nf = y1\n", "unknown symbol"),
    ],
)
def test_problem_file_errors(extra, fragment):
    with pytest.raises(ProblemFileError) as info:
        loads(BASE + extra)
    assert fragment in str(info.value)
    assert info.value.line is not None


def test_forbidden_symbol_is_reported_with_line():
    with pytest.raises(ProblemFileError) as info:
        loads(BASE.replace("lagrangian = u1^2", "lagrangian = u1^2 + psi1"))
    assert "ForbiddenSymbol" in str(info.value) and info.value.line == 7


def test_box_control_set():
    pf = loads(BASE + "control_set = box(-1 1)\n")
    assert pf.problem.control_set == Box((-1.0,), (1.0,))


def test_trailing_comments():
    pf = loads(BASE.replace("t1 = 1", "t1 = 1   # end of horizon") + "[candidates]  # none yet\nf = psi1 # costate\n")
    assert pf.problem.b == 1.0 and pf.candidates == {"f": P("psi1")}
