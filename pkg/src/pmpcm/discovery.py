"""Search for constants of the motion inside a linear ansatz.

The residual is linear in the candidate, so for ``F = sum_k c_k g_k`` the
reduced residual vanishes iff ``M c = 0`` where column ``k`` of ``M`` holds
the reduced residual of ``g_k`` at random sample points.  Nullspace vectors
are turned back into expressions and every one is re-checked symbolically
and along integrated extremals before it is reported.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import expr as ex
from .conservation import (
    DEFAULT_TOL,
    ConservationVerdict,
    SymbolicStatus,
    check_numeric,
    check_symbolic,
    reduce_modulo_stationarity,
    residual,
)
from .errors import DomainError, EmptyBasis, ForbiddenSymbol, IntegrationError, Undecidable
from .expr import Expr
from .extremal import DEFAULT_ATOL, DEFAULT_RTOL, Trajectory, build_field, integrate
from .ocp import ControlElimination, OCProblem, build_hamiltonian, eliminate_controls

__all__ = [
    "Family",
    "AnsatzSpec",
    "DiscoveryResult",
    "generate_basis",
    "residual_matrix",
    "extract_nullspace",
    "seeded_extremals",
    "discover",
]

log = logging.getLogger(__name__)

SNAP_TOL = 1e-9
SNAP_MAX_DENOMINATOR = 64
NULLSPACE_THRESHOLD = 1e-8
VERIFY_TRAJECTORIES = 5
MAX_REDRAWS = 256


class Family(str, enum.Enum):
    BILINEAR_PSI_X = "BilinearPsiX"
    BILINEAR_PLUS_HT = "BilinearPlusHT"
    CUSTOM = "Custom"


@dataclass(frozen=True)
class AnsatzSpec:
    family: Family = Family.BILINEAR_PSI_X
    max_t_degree: int = 0
    sample_count: int | None = None
    """Rows of the residual matrix; ``None`` means 4 x basis size."""
    seed: int = 0
    custom: tuple[Expr, ...] = ()


@dataclass
class DiscoveryResult:
    basis: list[Expr]
    singular_values: np.ndarray
    threshold: float
    coefficient_vectors: list[np.ndarray]
    """Orthonormal basis of the sampled nullspace."""
    candidate_coefficients: list[list[Fraction]]
    """Coefficients (over ``basis``) of each emitted candidate."""
    candidates: list[Expr]
    verdicts: list[ConservationVerdict]
    dropped: list[tuple[Expr, str]] = field(default_factory=list)

    @property
    def nullspace_dimension(self) -> int:
        return len(self.coefficient_vectors)


def _eliminated_hamiltonian(p: OCProblem, elim: ControlElimination | None) -> Expr:
    H = build_hamiltonian(p)
    if elim is None:
        elim = eliminate_controls(p, H)
    return ex.substitute(H, elim.controls)


def generate_basis(p: OCProblem, spec: AnsatzSpec, elim: ControlElimination | None = None) -> list[Expr]:
    """Ansatz functions in a deterministic order.

    ``BilinearPsiX`` gives ``psi_i * x_j * t^d`` (i, then j, then d);
    ``BilinearPlusHT`` appends ``H * t^d`` for ``d <= max_t_degree + 1``
    with the controls eliminated from ``H``.
    """
    if spec.max_t_degree < 0:
        raise ValueError("max_t_degree must be >= 0")
    t = ex.var("t")
    degrees = range(spec.max_t_degree + 1)
    if spec.family is Family.CUSTOM:
        basis = [ex.normalize(g) for g in spec.custom]
    else:
        basis = [
            ex.normalize(ex.mul(ex.var(psi), ex.var(x), ex.power(t, d)))
            for psi in p.costate_names
            for x in p.state_names
            for d in degrees
        ]
        if spec.family is Family.BILINEAR_PLUS_HT:
            H = _eliminated_hamiltonian(p, elim)
            basis += [ex.normalize(ex.mul(H, ex.power(t, d))) for d in range(spec.max_t_degree + 2)]
    if not basis:
        raise EmptyBasis("ansatz basis is empty")
    allowed = {"t", "psi0", *p.state_names, *p.costate_names}
    seen = set()
    for g in basis:
        bad = ex.free_variables(g) - allowed
        if bad:
            raise ForbiddenSymbol(f"basis element {ex.to_text(g)} uses {', '.join(sorted(bad))}")
        if g == ex.const(0):
            raise ValueError("basis contains the zero expression")
        if g in seen:
            raise ValueError(f"duplicate basis element {ex.to_text(g)}")
        seen.add(g)
    return basis


def _reduced_residuals(basis: Sequence[Expr], p: OCProblem, elim: ControlElimination, H: Expr) -> list[Expr]:
    return [reduce_modulo_stationarity(residual(g, H, p), elim) for g in basis]


def residual_matrix(
    basis: Sequence[Expr],
    p: OCProblem,
    spec: AnsatzSpec,
    elim: ControlElimination | None = None,
) -> np.ndarray:
    """Reduced residual of each basis element at seeded random points.

    Entry ``(s, k)`` is the residual of ``basis[k]`` at sample ``s``.  The
    sample points depend only on the problem and ``spec.seed``.
    """
    count = 4 * len(basis) if spec.sample_count is None else spec.sample_count
    if count <= 0:
        raise ValueError("sample_count must be positive")
    H = build_hamiltonian(p)
    if elim is None:
        elim = eliminate_controls(p, H, spec.seed)
    columns = _reduced_residuals(basis, p, elim, H)
    args = ("t",) + p.state_names + p.costate_names
    fn = ex.compile_exprs(columns, args, {"psi0": p.psi0})
    rng = np.random.default_rng(spec.seed)
    rows = []
    redraws = 0
    while len(rows) < count:
        t = rng.uniform(p.a, p.b)
        zs = ex.random_sign_magnitude(rng, 2 * p.n)
        try:
            row = fn([t, *zs.tolist()])
        except DomainError:
            row = None
        if row is None or not all(np.isfinite(row)):
            redraws += 1
            if redraws > MAX_REDRAWS:
                raise Undecidable("too many sample points fell outside the residual's domain")
            continue
        rows.append(row)
    return np.array(rows, dtype=float).reshape(count, len(basis))


def _nullspace(M: np.ndarray, threshold: float) -> tuple[list[np.ndarray], np.ndarray]:
    M = np.asarray(M, dtype=float)
    k = M.shape[1]
    if M.size == 0:
        return [np.eye(k)[i] for i in range(k)], np.zeros(0)
    _, s, vh = np.linalg.svd(M, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > threshold * smax)) if smax > 0 else 0
    vectors = []
    for v in vh[rank:]:
        pivot = np.flatnonzero(np.abs(v) > 1e-12)
        if pivot.size and v[pivot[0]] < 0:
            v = -v
        vectors.append(v.copy())
    return vectors, s


def extract_nullspace(M: np.ndarray, threshold: float = NULLSPACE_THRESHOLD) -> list[np.ndarray]:
    """Orthonormal right-nullspace basis of ``M`` via the SVD.

    Singular values below ``threshold`` times the largest count as zero.
    """
    return _nullspace(M, threshold)[0]


def _rref(N: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    A = np.array(N, dtype=float)
    rows, cols = A.shape
    r = 0
    for c in range(cols):
        if r == rows:
            break
        p = r + int(np.argmax(np.abs(A[r:, c])))
        if abs(A[p, c]) <= tol:
            A[r:, c] = 0.0
            continue
        A[[r, p]] = A[[p, r]]
        A[r] /= A[r, c]
        for i in range(rows):
            if i != r:
                A[i] -= A[i, c] * A[r]
        r += 1
    A[np.abs(A) <= tol] = 0.0
    return A[:r]


def _snap(x: float) -> Fraction:
    q = Fraction(x).limit_denominator(SNAP_MAX_DENOMINATOR)
    if abs(x - float(q)) <= SNAP_TOL:
        return q
    return Fraction(x)


def _leading_coefficient(e: Expr) -> Fraction:
    lead = e.children[0] if e.kind == "sum" else e
    if lead.kind == "neg":
        return Fraction(-1)
    if lead.kind == "product" and lead.children[0].kind == "const":
        return lead.children[0].value
    if lead.kind == "const" and lead.value:
        return lead.value
    return Fraction(1)


def _assemble(coeffs: Sequence[Fraction], basis: Sequence[Expr]) -> tuple[Expr, Fraction]:
    """``sum c_k g_k`` scaled so its leading term has coefficient 1; returns the scale too."""
    e = ex.normalize(ex.add(*(ex.mul(ex.const(c), g) for c, g in zip(coeffs, basis) if c)))
    scale = 1 / _leading_coefficient(e)
    return e * scale, scale


def seeded_extremals(
    p: OCProblem,
    elim: ControlElimination,
    count: int,
    seed: int,
    span: tuple[float, float] | None = None,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    samples: int = 200,
) -> list[Trajectory]:
    """Integrate ``count`` extremals from seeded random initial values.

    Initial states and costates are drawn from [-2, -0.1] U [0.1, 2];
    draws whose integration fails are replaced.
    """
    field_ = build_field(p, elim)
    rng = np.random.default_rng([seed, 0x5EED])
    out: list[Trajectory] = []
    failures = 0
    while len(out) < count:
        z = ex.random_sign_magnitude(rng, 2 * p.n).tolist()
        try:
            out.append(integrate(field_, z[: p.n], z[p.n:], span, rtol, atol, samples))
        except (IntegrationError, DomainError) as exc:
            failures += 1
            log.debug("discarding seeded extremal: %s", exc)
            if failures > MAX_REDRAWS:
                raise
    return out


def discover(
    p: OCProblem,
    spec: AnsatzSpec,
    threshold: float = NULLSPACE_THRESHOLD,
    tol: float = DEFAULT_TOL,
    trajectories: Sequence[Trajectory] | None = None,
) -> DiscoveryResult:
    H = build_hamiltonian(p)
    elim = eliminate_controls(p, H, spec.seed)
    basis = generate_basis(p, spec, elim)
    M = residual_matrix(basis, p, spec, elim)
    vectors, s = _nullspace(M, threshold)
    if trajectories is None and vectors:
        trajectories = seeded_extremals(p, elim, VERIFY_TRAJECTORIES, spec.seed)

    result = DiscoveryResult(
        basis=list(basis),
        singular_values=s,
        threshold=threshold,
        coefficient_vectors=vectors,
        candidate_coefficients=[],
        candidates=[],
        verdicts=[],
    )
    if not vectors:
        return result
    for row in _rref(np.array(vectors)):
        coeffs = [_snap(float(c)) for c in row]
        cand, scale = _assemble(coeffs, basis)
        sym = check_symbolic(cand, p, spec.seed, elim, H)
        num = check_numeric(cand, p, trajectories, tol)
        verdict = sym.merge(num)
        keep = sym.symbolic_status is SymbolicStatus.CONSERVED or (
            sym.symbolic_status is SymbolicStatus.UNDECIDABLE and num.numeric_pass
        )
        if not keep:
            reason = f"symbolic status {sym.symbolic_status.value}, numeric pass {num.numeric_pass}"
            log.info("dropping candidate %s: %s", ex.to_text(cand), reason)
            result.dropped.append((cand, reason))
            continue
        result.candidate_coefficients.append([c * scale for c in coeffs])
        result.candidates.append(cand)
        result.verdicts.append(verdict)
    return result

