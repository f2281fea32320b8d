"""Optimal control problems, their Hamiltonian, and control elimination."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

from . import expr as ex
from .errors import (
    BadHorizon,
    BadPsi0,
    DimensionMismatch,
    DomainError,
    ForbiddenSymbol,
    NotConcave,
    NotSolvable,
    UnsupportedControlSet,
)
from .expr import Expr

__all__ = [
    "Free",
    "Box",
    "OCProblem",
    "ControlElimination",
    "validate",
    "make_problem",
    "build_hamiltonian",
    "stationarity_system",
    "eliminate_controls",
]


@dataclass(frozen=True)
class Free:
    """Unconstrained control set, Omega = R^r."""

    def __str__(self) -> str:
        return "free"


@dataclass(frozen=True)
class Box:
    low: tuple[float, ...]
    high: tuple[float, ...]

    def __str__(self) -> str:
        pairs = "; ".join(f"{lo!r} {hi!r}" for lo, hi in zip(self.low, self.high))
        return f"box({pairs})"


ControlSet = Union[Free, Box]


@dataclass(frozen=True)
class OCProblem:
    """Minimize the integral of ``L`` over ``[a, b]`` subject to ``x' = phi``.

    States are ``x1..xn``, controls ``u1..ur``, costates ``psi1..psin``.
    ``psi0`` is the (nonpositive) cost multiplier used when a numeric value
    is needed; it stays symbolic inside the Hamiltonian.
    """

    name: str
    n: int
    r: int
    a: float
    b: float
    L: Expr
    phi: tuple[Expr, ...]
    control_set: ControlSet = field(default_factory=Free)
    psi0: float = -1.0

    @property
    def state_names(self) -> tuple[str, ...]:
        return tuple(f"x{i}" for i in range(1, self.n + 1))

    @property
    def control_names(self) -> tuple[str, ...]:
        return tuple(f"u{j}" for j in range(1, self.r + 1))

    @property
    def costate_names(self) -> tuple[str, ...]:
        return tuple(f"psi{i}" for i in range(1, self.n + 1))

    @property
    def symbols(self) -> frozenset[str]:
        """Every name an expression over this problem may use."""
        return frozenset(("t", "psi0") + self.state_names + self.control_names + self.costate_names)

    @property
    def is_autonomous(self) -> bool:
        return "t" not in ex.free_variables(self.L) and not any(
            "t" in ex.free_variables(f) for f in self.phi
        )


def validate(p: OCProblem) -> OCProblem:
    """Check the problem invariants and return a normalized copy."""
    if p.n < 1 or p.r < 1:
        raise DimensionMismatch(f"need n >= 1 and r >= 1, got n={p.n}, r={p.r}")
    if len(p.phi) != p.n:
        raise DimensionMismatch(f"dynamics has {len(p.phi)} entries but the problem has n={p.n} states")
    if not p.a < p.b:
        raise BadHorizon(f"horizon must satisfy a < b, got [{p.a}, {p.b}]")
    if not p.psi0 <= 0:
        raise BadPsi0(f"psi0 must be <= 0, got {p.psi0}")
    if isinstance(p.control_set, Box):
        if len(p.control_set.low) != p.r or len(p.control_set.high) != p.r:
            raise DimensionMismatch(f"box control set needs {p.r} bounds")
        if any(lo > hi for lo, hi in zip(p.control_set.low, p.control_set.high)):
            raise DimensionMismatch("box control set has low > high")
    allowed = {"t", *p.state_names, *p.control_names}
    L = ex.normalize(p.L)
    phi = tuple(ex.normalize(f) for f in p.phi)
    for label, e in [("lagrangian", L)] + [(f"dynamics[{i + 1}]", f) for i, f in enumerate(phi)]:
        bad = ex.free_variables(e) - allowed
        if bad:
            raise ForbiddenSymbol(f"{label} uses symbols not allowed there: {', '.join(sorted(bad))}")
    return replace(p, L=L, phi=phi, a=float(p.a), b=float(p.b), psi0=float(p.psi0))


def make_problem(
    name: str,
    n: int,
    r: int,
    lagrangian: str | Expr,
    dynamics: Sequence[str | Expr],
    a: float = 0.0,
    b: float = 1.0,
    control_set: ControlSet | None = None,
    psi0: float = -1.0,
) -> OCProblem:
    """Build and validate a problem from text or expressions."""
    names = [f"x{i}" for i in range(1, n + 1)] + [f"u{j}" for j in range(1, r + 1)]
    names += [f"psi{i}" for i in range(1, n + 1)]

    def conv(e):
        return ex.parse(e, names) if isinstance(e, str) else e

    return validate(
        OCProblem(
            name=name,
            n=n,
            r=r,
            a=a,
            b=b,
            L=conv(lagrangian),
            phi=tuple(conv(f) for f in dynamics),
            control_set=control_set if control_set is not None else Free(),
            psi0=psi0,
        )
    )


def build_hamiltonian(p: OCProblem) -> Expr:
    """``psi0*L + sum_i psi_i*phi_i`` with psi0 kept symbolic."""
    terms = [ex.mul(ex.var("psi0"), p.L)]
    terms += [ex.mul(ex.var(c), f) for c, f in zip(p.costate_names, p.phi)]
    return ex.normalize(ex.add(*terms))


def stationarity_system(p: OCProblem, H: Expr) -> list[Expr]:
    return [ex.differentiate(H, u) for u in p.control_names]


@dataclass(frozen=True)
class ControlElimination:
    """Controls expressed through the interior stationarity conditions.

    ``controls`` maps each control name to an expression in
    ``t, x, psi0, psi``; ``stationarity`` holds dH/du_j before substitution.
    """

    controls: dict[str, Expr]
    stationarity: tuple[Expr, ...]

    def as_text(self) -> list[str]:
        return [f"{u} = {ex.to_text(e)}" for u, e in self.controls.items()]


CONCAVITY_POINTS = 8


def _random_binding(p: OCProblem, names: Iterable[str], rng: np.random.Generator) -> dict[str, float]:
    out = {}
    for name in names:
        if name == "t":
            out[name] = float(rng.uniform(p.a, p.b))
        elif name == "psi0":
            out[name] = p.psi0
        else:
            out[name] = float(ex.random_sign_magnitude(rng))
    return out


def _solve_linear(A: list[list[Expr]], rhs: list[Expr], psi0: float, seed: int) -> list[Expr]:
    """Symbolic Gauss-Jordan; pivots must be nonzero once psi0 is bound."""
    r = len(rhs)
    A = [row[:] for row in A]
    rhs = rhs[:]
    bind = {"psi0": ex.const(Fraction(repr(psi0)))}
    for col in range(r):
        pivot = None
        for row in range(col, r):
            if not ex.is_zero(ex.substitute(A[row][col], bind), seed):
                pivot = row
                break
        if pivot is None:
            raise NotSolvable("stationarity system has a singular coefficient matrix")
        A[col], A[pivot] = A[pivot], A[col]
        rhs[col], rhs[pivot] = rhs[pivot], rhs[col]
        inv = ex.normalize(ex.power(A[col][col], -1))
        A[col] = [ex.normalize(ex.mul(inv, e)) for e in A[col]]
        rhs[col] = ex.normalize(ex.mul(inv, rhs[col]))
        for row in range(r):
            if row == col or A[row][col] == ex.const(0):
                continue
            f = A[row][col]
            A[row] = [A[row][k] - f * A[col][k] for k in range(r)]
            rhs[row] = rhs[row] - f * rhs[col]
    return rhs


def eliminate_controls(p: OCProblem, H: Expr, seed: int = 0) -> ControlElimination:
    """Solve dH/du = 0 for the controls and check the solution maximizes H.

    The stationarity system must be linear in the controls.  Its coefficient
    matrix may depend on ``t``, ``x`` and ``psi0`` but not on the controls,
    and must be nonsingular with psi0 bound to ``p.psi0``.
    """
    if not isinstance(p.control_set, Free):
        raise UnsupportedControlSet(f"symbolic elimination needs a free control set, got {p.control_set}")
    controls = p.control_names
    grads = stationarity_system(p, H)
    cset = set(controls)
    A: list[list[Expr]] = []
    for g in grads:
        row = [ex.differentiate(g, u) for u in controls]
        if any(ex.free_variables(a) & cset for a in row):
            raise NotSolvable("stationarity system is nonlinear in the controls")
        A.append(row)
    zero = {u: 0 for u in controls}
    offsets = [ex.normalize(ex.neg(ex.substitute(g, zero))) for g in grads]
    solution = _solve_linear(A, offsets, p.psi0, seed)
    elim = dict(zip(controls, solution))

    for g in grads:
        if not ex.is_zero(ex.substitute(g, elim), seed):
            raise NotSolvable("substituted solution does not satisfy the stationarity system")

    # the Hessian in u is A itself; it must be negative semidefinite
    psi0_bind = {"psi0": ex.const(Fraction(repr(p.psi0)))}
    hess = [[ex.substitute(a, psi0_bind) for a in row] for row in A]
    names = sorted(set().union(*(ex.free_variables(a) for row in hess for a in row)))
    rng = np.random.default_rng(seed)
    checked = attempts = 0
    while checked < CONCAVITY_POINTS:
        attempts += 1
        if attempts > 256:
            raise NotConcave("could not evaluate the control Hessian")
        binding = _random_binding(p, names, rng)
        try:
            M = np.array([[ex.evaluate(a, binding) for a in row] for row in hess])
        except DomainError:
            continue
        eig = np.linalg.eigvalsh(0.5 * (M + M.T))
        if eig.max() > 1e-12 * max(1.0, np.abs(eig).max()):
            raise NotConcave(f"Hessian of H in u is not negative semidefinite at {binding}")
        checked += 1
    return ControlElimination(controls=elim, stationarity=tuple(grads))
