"""Reader for the sectioned ``key = value`` problem file format.

Example::

    [problem]
    name = scalar
    states = 1
    controls = 1
    t0 = 0
    t1 = 1
    lagrangian = u1^2
    dynamics = u1

    [candidates]
    costate = psi1

    [simulate]
    x0 = 0
    psi_init = 2

``#`` starts a comment that runs to the end of the line.  An indented line continues the
previous value.  Lists (``dynamics``, ``x0``...) are separated by ``;`` or
newlines for expressions and by ``,`` for numbers.  Unknown sections and
keys are errors.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import expr as ex
from .discovery import AnsatzSpec, Family
from .errors import (
    BadHorizon,
    BadPsi0,
    DimensionMismatch,
    ExprSyntaxError,
    NonIntegerExponent,
    PMPError,
    ProblemFileError,
    UnknownSymbol,
)
from .expr import Expr
from .ocp import Box, Free, OCProblem, validate

__all__ = ["ProblemFile", "SimulateSpec", "load", "loads"]

_KEYS = {
    "problem": {"name", "states", "controls", "t0", "t1", "lagrangian", "dynamics", "control_set", "psi0"},
    "simulate": {"x0", "psi_init", "span", "rtol", "atol", "samples"},
    "discover": {"family", "max_t_degree", "seed", "sample_count", "basis"},
}
_REQUIRED = {
    "problem": ("name", "states", "controls", "t0", "t1", "lagrangian", "dynamics"),
    "simulate": ("x0", "psi_init"),
    "discover": (),
}
_SECTION = re.compile(r"\[\s*([A-Za-z_]+)\s*\]\s*\Z")
_ENTRY = re.compile(r"([A-Za-z_][A-Za-z_0-9]*)\s*=\s?")


@dataclass(frozen=True)
class SimulateSpec:
    x0: tuple[float, ...]
    psi_init: tuple[float, ...]
    span: tuple[float, float] | None = None
    rtol: float | None = None
    atol: float | None = None
    samples: int | None = None


@dataclass
class ProblemFile:
    problem: OCProblem
    candidates: dict[str, Expr] = field(default_factory=dict)
    simulate: SimulateSpec | None = None
    discover: AnsatzSpec | None = None
    has_candidates_section: bool = False


@dataclass
class _Value:
    text: str
    line: int
    # (offset in text, line, column) for each physical line of the value
    anchors: list[tuple[int, int, int]]

    def locate(self, offset: int) -> tuple[int, int]:
        line, col, base = self.line, 1, 0
        for start, ln, c in self.anchors:
            if start <= offset:
                base, line, col = start, ln, c
        return line, col + (offset - base)


def _scan(text: str) -> dict[str, dict[str, _Value]]:
    sections: dict[str, dict[str, _Value]] = {}
    current: dict[str, _Value] | None = None
    last: _Value | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        raw = raw.split("#", 1)[0].rstrip()
        stripped = raw.strip()
        if not stripped:
            continue
        if raw[0] in " \t" and last is not None:
            col = len(raw) - len(raw.lstrip()) + 1
            last.anchors.append((len(last.text) + 1, lineno, col))
            last.text += "\n" + stripped
            continue
        m = _SECTION.match(stripped)
        if m:
            name = m.group(1)
            if name not in _KEYS and name != "candidates":
                raise ProblemFileError(f"unknown section [{name}]", lineno, 1)
            if name in sections:
                raise ProblemFileError(f"duplicate section [{name}]", lineno, 1)
            current = sections[name] = {}
            last = None
            continue
        if current is None:
            raise ProblemFileError("entry outside of any section", lineno, 1)
        m = _ENTRY.match(raw)
        if not m:
            raise ProblemFileError("expected 'key = value'", lineno, 1)
        key = m.group(1)
        if key in current:
            raise ProblemFileError(f"duplicate key {key!r}", lineno, 1)
        value = raw[m.end():]
        lead = len(value) - len(value.lstrip())
        col = m.end() + lead + 1
        last = current[key] = _Value(value.strip(), lineno, [(0, lineno, col)])
    for name, entries in sections.items():
        allowed = _KEYS.get(name)
        if allowed is None:
            continue
        for key, v in entries.items():
            if key not in allowed:
                raise ProblemFileError(f"unknown key {key!r} in [{name}]", v.line, 1)
    return sections


def _pieces(v: _Value, sep: str) -> list[tuple[str, int]]:
    pattern = r"[^;\n]+" if sep == ";" else r"[^,\n]+"
    out = []
    for m in re.finditer(pattern, v.text):
        piece = m.group(0)
        if piece.strip():
            out.append((piece.strip(), m.start() + len(piece) - len(piece.lstrip())))
    return out


def _expr(v: _Value, text: str, offset: int, symbols) -> Expr:
    try:
        return ex.parse(text, symbols)
    except ExprSyntaxError as exc:
        line, col = v.locate(offset + exc.position)
        raise ProblemFileError(str(exc), line, col) from None
    except (UnknownSymbol, NonIntegerExponent) as exc:
        line, col = v.locate(offset)
        raise ProblemFileError(str(exc), line, col) from None


def _number(v: _Value, text: str, offset: int, kind=float):
    try:
        value = kind(text)
    except ValueError:
        line, col = v.locate(offset)
        raise ProblemFileError(f"expected {'an integer' if kind is int else 'a number'}, got {text!r}", line, col) from None
    if kind is float and not math.isfinite(value):
        line, col = v.locate(offset)
        raise ProblemFileError(f"non-finite number {text!r}", line, col)
    return value


def _numbers(v: _Value) -> tuple[float, ...]:
    return tuple(_number(v, s, off) for s, off in _pieces(v, ","))


def _require(section: str, entries: dict[str, _Value], line: int) -> None:
    for key in _REQUIRED[section]:
        if key not in entries:
            raise ProblemFileError(f"[{section}] is missing required key {key!r}", line)


def _control_set(v: _Value, r: int):
    text = v.text.strip()
    if text.lower() == "free":
        return Free()
    m = re.fullmatch(r"box\s*\((.*)\)", text, flags=re.S | re.I)
    if not m:
        raise ProblemFileError("control_set must be 'free' or 'box(lo hi; lo hi; ...)'", *v.locate(0))
    low, high = [], []
    for pair in m.group(1).split(";"):
        parts = pair.split()
        if len(parts) != 2:
            raise ProblemFileError("each box bound needs 'low high'", *v.locate(0))
        lo, hi = (_number(v, s, 0) for s in parts)
        low.append(lo)
        high.append(hi)
    return Box(tuple(low), tuple(high))


def _blame(exc: PMPError, prob: dict[str, _Value]) -> int | None:
    msg = str(exc)
    if isinstance(exc, DimensionMismatch) or "dynamics" in msg:
        key = "dynamics" if "box" not in msg else "control_set"
    elif isinstance(exc, BadHorizon):
        key = "t0"
    elif isinstance(exc, BadPsi0):
        key = "psi0"
    else:
        key = "lagrangian"
    return prob[key].line if key in prob else None


def loads(text: str) -> ProblemFile:
    sections = _scan(text)
    if "problem" not in sections:
        raise ProblemFileError("missing [problem] section", 1)
    prob = sections["problem"]
    first = min((v.line for v in prob.values()), default=1)
    _require("problem", prob, first)
    n = _number(prob["states"], prob["states"].text, 0, int)
    r = _number(prob["controls"], prob["controls"].text, 0, int)
    if n < 1 or r < 1:
        raise ProblemFileError("states and controls must be >= 1", prob["states"].line)
    state_syms = [f"x{i}" for i in range(1, n + 1)] + [f"u{j}" for j in range(1, r + 1)]
    state_syms += [f"psi{i}" for i in range(1, n + 1)]
    L = _expr(prob["lagrangian"], prob["lagrangian"].text, 0, state_syms)
    dyn = prob["dynamics"]
    phi = tuple(_expr(dyn, s, off, state_syms) for s, off in _pieces(dyn, ";"))
    p = OCProblem(
        name=prob["name"].text,
        n=n,
        r=r,
        a=_number(prob["t0"], prob["t0"].text, 0),
        b=_number(prob["t1"], prob["t1"].text, 0),
        L=L,
        phi=phi,
        control_set=_control_set(prob["control_set"], r) if "control_set" in prob else Free(),
        psi0=_number(prob["psi0"], prob["psi0"].text, 0) if "psi0" in prob else -1.0,
    )
    try:
        p = validate(p)
    except PMPError as exc:
        raise ProblemFileError(f"{type(exc).__name__}: {exc}", _blame(exc, prob)) from None

    out = ProblemFile(problem=p)
    if "candidates" in sections:
        out.has_candidates_section = True
        for name, v in sections["candidates"].items():
            out.candidates[name] = _expr(v, v.text, 0, p.symbols)

    if "simulate" in sections:
        sim = sections["simulate"]
        line = min((v.line for v in sim.values()), default=1)
        _require("simulate", sim, line)
        span = None
        if "span" in sim:
            vals = _numbers(sim["span"])
            if len(vals) != 2:
                raise ProblemFileError("span needs exactly two numbers", sim["span"].line)
            span = (vals[0], vals[1])
        out.simulate = SimulateSpec(
            x0=_numbers(sim["x0"]),
            psi_init=_numbers(sim["psi_init"]),
            span=span,
            rtol=_number(sim["rtol"], sim["rtol"].text, 0) if "rtol" in sim else None,
            atol=_number(sim["atol"], sim["atol"].text, 0) if "atol" in sim else None,
            samples=_number(sim["samples"], sim["samples"].text, 0, int) if "samples" in sim else None,
        )
        for key, size in (("x0", len(out.simulate.x0)), ("psi_init", len(out.simulate.psi_init))):
            if size != n:
                raise ProblemFileError(f"{key} needs {n} values, got {size}", sim[key].line)

    if "discover" in sections:
        d = sections["discover"]
        family = Family.BILINEAR_PSI_X
        if "family" in d:
            try:
                family = Family(d["family"].text)
            except ValueError:
                names = ", ".join(f.value for f in Family)
                raise ProblemFileError(f"family must be one of {names}", *d["family"].locate(0)) from None
        custom: tuple[Expr, ...] = ()
        if "basis" in d:
            custom = tuple(_expr(d["basis"], s, off, p.symbols) for s, off in _pieces(d["basis"], ";"))
        if family is Family.CUSTOM and not custom:
            raise ProblemFileError("family Custom needs a 'basis' entry", d["family"].line)
        out.discover = AnsatzSpec(
            family=family,
            max_t_degree=_number(d["max_t_degree"], d["max_t_degree"].text, 0, int) if "max_t_degree" in d else 0,
            sample_count=_number(d["sample_count"], d["sample_count"].text, 0, int) if "sample_count" in d else None,
            seed=_number(d["seed"], d["seed"].text, 0, int) if "seed" in d else 0,
            custom=custom,
        )
    return out


def load(path: str | Path) -> ProblemFile:
    return loads(Path(path).read_text(encoding="utf-8"))
