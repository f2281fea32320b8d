"""Residual of a candidate invariant along extremals, and its checks.

For a candidate ``F(t, x, u, psi0, psi)`` the residual is

    dF/dt + sum_i dF/dx_i * dH/dpsi_i - sum_i dF/dpsi_i * dH/dx_i

computed against the Hamiltonian with the controls still symbolic.  ``F`` is
conserved along every extremal exactly when the residual vanishes once the
controls are replaced by their stationarity solution.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

from . import expr as ex
from .errors import NotConcave, NotSolvable, UnboundVariable
from .expr import Expr
from .extremal import Trajectory, evaluate_along
from .ocp import ControlElimination, OCProblem, build_hamiltonian, eliminate_controls

__all__ = [
    "SymbolicStatus",
    "DriftReport",
    "ConservationVerdict",
    "residual",
    "reduce_modulo_stationarity",
    "check_symbolic",
    "check_numeric",
    "relative_drift",
    "DEFAULT_TOL",
]

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7


class SymbolicStatus(str, enum.Enum):
    CONSERVED = "ConservedSymbolically"
    NONZERO = "NonzeroResidual"
    UNDECIDABLE = "Undecidable"


@dataclass(frozen=True)
class DriftReport:
    trajectory_id: int
    max_abs_drift: float
    relative_drift: float


@dataclass
class ConservationVerdict:
    candidate: Expr
    raw_residual: Expr | None = None
    reduced_residual: Expr | None = None
    symbolic_status: SymbolicStatus | None = None
    reason: str = ""
    drift_reports: list[DriftReport] = field(default_factory=list)
    numeric_pass: bool | None = None
    tol: float | None = None

    @property
    def conserved(self) -> bool:
        return self.symbolic_status is SymbolicStatus.CONSERVED

    def merge(self, other: ConservationVerdict) -> ConservationVerdict:
        """Combine a symbolic verdict with a numeric one for the same F."""
        out = ConservationVerdict(candidate=self.candidate)
        for src in (self, other):
            for name in ("raw_residual", "reduced_residual", "symbolic_status", "numeric_pass", "tol"):
                if getattr(src, name) is not None:
                    setattr(out, name, getattr(src, name))
            out.drift_reports.extend(src.drift_reports)
            out.reason = out.reason or src.reason
        return out


def _check_arguments(F: Expr, p: OCProblem) -> None:
    allowed = {"t", "psi0", *p.state_names, *p.control_names, *p.costate_names}
    extra = ex.free_variables(F) - allowed
    if extra:
        raise UnboundVariable(f"candidate uses symbols outside the problem: {', '.join(sorted(extra))}")


def residual(F: Expr, H: Expr, p: OCProblem) -> Expr:
    """Total time derivative of ``F`` along the Hamiltonian flow of ``H``.

    No dF/du term appears: along an extremal that term vanishes whenever F
    is maximized in u at the extremal control.
    """
    _check_arguments(F, p)
    terms = [ex.differentiate(F, "t")]
    for x, psi in zip(p.state_names, p.costate_names):
        terms.append(ex.mul(ex.differentiate(F, x), ex.differentiate(H, psi)))
        terms.append(ex.neg(ex.mul(ex.differentiate(F, psi), ex.differentiate(H, x))))
    return ex.normalize(ex.add(*terms))


def reduce_modulo_stationarity(r: Expr, elim: ControlElimination) -> Expr:
    return ex.substitute(r, elim.controls)


def check_symbolic(
    F: Expr,
    p: OCProblem,
    seed: int = 0,
    elim: ControlElimination | None = None,
    H: Expr | None = None,
) -> ConservationVerdict:
    """Decide conservation of ``F`` from its stationarity-reduced residual.

    A candidate depending on the controls additionally needs dF/du to
    vanish at the eliminated control; otherwise the status is Undecidable.
    """
    H = build_hamiltonian(p) if H is None else H
    raw = residual(F, H, p)
    verdict = ConservationVerdict(candidate=F, raw_residual=raw)
    if elim is None:
        try:
            elim = eliminate_controls(p, H, seed)
        except (NotSolvable, NotConcave) as exc:
            verdict.symbolic_status = SymbolicStatus.UNDECIDABLE
            verdict.reason = f"controls cannot be eliminated: {exc}"
            return verdict
    reduced = reduce_modulo_stationarity(raw, elim)
    verdict.reduced_residual = reduced
    if not ex.is_zero(reduced, seed):
        verdict.symbolic_status = SymbolicStatus.NONZERO
        verdict.reason = "reduced residual is not identically zero"
        return verdict
    for u in sorted(ex.free_variables(F) & set(p.control_names)):
        dFdu = reduce_modulo_stationarity(ex.differentiate(F, u), elim)
        if not ex.is_zero(dFdu, seed):
            verdict.symbolic_status = SymbolicStatus.UNDECIDABLE
            verdict.reason = f"dF/d{u} does not vanish at the eliminated control; maximality of F in u is not certified"
            return verdict
    verdict.symbolic_status = SymbolicStatus.CONSERVED
    return verdict


def relative_drift(values: Sequence[float]) -> tuple[float, float]:
    """``(max |F(t) - F(t0)|, that / (1 + |F(t0)|))``."""
    f0 = values[0]
    drift = max(abs(v - f0) for v in values)
    return drift, drift / (1.0 + abs(f0))


def check_numeric(
    F: Expr,
    p: OCProblem,
    trajectories: Sequence[Trajectory],
    tol: float = DEFAULT_TOL,
) -> ConservationVerdict:
    """Measure how far ``F`` drifts along numerically integrated extremals."""
    _check_arguments(F, p)
    reports = []
    for i, tr in enumerate(trajectories):
        values = [v for _, v in evaluate_along(tr, F)]
        drift, rel = relative_drift(values)
        reports.append(DriftReport(trajectory_id=i, max_abs_drift=drift, relative_drift=rel))
    passed = all(r.relative_drift <= tol for r in reports)
    if not passed:
        worst = max(reports, key=lambda r: r.relative_drift)
        log.debug("numeric check failed for %s: relative drift %.3g on trajectory %d",
                  ex.to_text(F), worst.relative_drift, worst.trajectory_id)
    return ConservationVerdict(candidate=F, drift_reports=reports, numeric_pass=passed, tol=tol)
