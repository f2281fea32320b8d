"""Immutable symbolic expressions.

An :class:`Expr` is a small tree whose nodes are rational constants,
variables, sums, products, integer powers, negations and the unary
functions ``sin cos exp log sqrt``.  Everything user-facing returns trees in
*normal form*: a sum of products with exact rational coefficients, factors
in a fixed total order, no zero terms and no unit factors.  Internally the
normal form is computed through a sparse polynomial whose "atoms" are
variables, function applications and (for negative powers only) sums.

Division is a power with exponent -1.  Positive powers of sums are always
expanded; negative powers are kept as an atom ``(s)^-k`` where ``s`` is made
monic in its leading term so that equal denominators compare equal.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    DomainError,
    ExprSyntaxError,
    NonIntegerExponent,
    UnboundVariable,
    Undecidable,
    UnknownSymbol,
)

__all__ = [
    "Expr",
    "FUNCTIONS",
    "RESERVED",
    "const",
    "var",
    "add",
    "mul",
    "power",
    "neg",
    "func",
    "sin",
    "cos",
    "exp",
    "log",
    "sqrt",
    "as_expr",
    "normalize",
    "parse",
    "to_text",
    "differentiate",
    "substitute",
    "evaluate",
    "is_zero",
    "free_variables",
    "compile_exprs",
    "CompiledExprs",
]

RESERVED = frozenset({"t", "psi0"})
FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")

_RANK = {"const": 0, "var": 1, "func": 2, "pow": 3, "product": 4, "sum": 5, "neg": 6}
_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*\Z")

Number = Union[int, float, Fraction]


def _natural(name: str) -> tuple:
    parts = re.split(r"(\d+)", name)
    return tuple(int(p) if i % 2 else p for i, p in enumerate(parts))


class Expr:
    """Immutable expression node.

    Build trees with the module-level constructors (:func:`var`, :func:`add`,
    ...) or with Python operators; operators return normalized results.
    """

    __slots__ = ("kind", "children", "value", "name", "_hash", "_key", "_poly", "_norm")

    def __init__(self, kind: str, children: Sequence[Expr] = (), value=None, name: str | None = None):
        set_ = object.__setattr__
        set_(self, "kind", kind)
        set_(self, "children", tuple(children))
        set_(self, "value", value)
        set_(self, "name", name)
        set_(self, "_hash", hash((kind, self.children, value, name)))
        set_(self, "_key", None)
        set_(self, "_poly", None)
        set_(self, "_norm", False)

    def __setattr__(self, key, value):
        raise AttributeError("Expr is immutable")

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, Expr) or self._hash != other._hash:
            return False
        return (
            self.kind == other.kind
            and self.value == other.value
            and self.name == other.name
            and self.children == other.children
        )

    def __ne__(self, other) -> bool:
        return not self == other

    @property
    def sort_key(self) -> tuple:
        """Total order used for canonical factor and term ordering."""
        k = self._key
        if k is None:
            if self.kind in ("var", "func"):
                namekey = _natural(self.name)
            else:
                namekey = ()
            value = self.value if self.value is not None else 0
            k = (_RANK[self.kind], namekey, value, tuple(c.sort_key for c in self.children))
            object.__setattr__(self, "_key", k)
        return k

    def __repr__(self) -> str:
        return f"Expr({to_text(self)!r})"

    def __str__(self) -> str:
        return to_text(self)

    # arithmetic returns normalized trees
    def __add__(self, other):
        return normalize(add(self, as_expr(other)))

    def __radd__(self, other):
        return normalize(add(as_expr(other), self))

    def __sub__(self, other):
        return normalize(add(self, neg(as_expr(other))))

    def __rsub__(self, other):
        return normalize(add(as_expr(other), neg(self)))

    def __mul__(self, other):
        return normalize(mul(self, as_expr(other)))

    def __rmul__(self, other):
        return normalize(mul(as_expr(other), self))

    def __truediv__(self, other):
        return normalize(mul(self, power(as_expr(other), -1)))

    def __rtruediv__(self, other):
        return normalize(mul(as_expr(other), power(self, -1)))

    def __pow__(self, k):
        if isinstance(k, Fraction) and k.denominator == 1:
            k = int(k)
        if not isinstance(k, int) or isinstance(k, bool):
            raise NonIntegerExponent(f"exponent must be an integer, got {k!r}")
        return normalize(power(self, k))

    def __neg__(self):
        return normalize(neg(self))

    def __pos__(self):
        return normalize(self)

    @property
    def is_constant(self) -> bool:
        return self.kind == "const"


# ---------------------------------------------------------------------------
# raw constructors (no normalization)


def const(value: Number) -> Expr:
    if isinstance(value, bool):
        value = int(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise DomainError(f"non-finite constant {value!r}")
        value = Fraction(repr(value))
    return Expr("const", value=Fraction(value))


def var(name: str) -> Expr:
    if not _IDENT.match(name) or name in FUNCTIONS:
        raise ValueError(f"invalid variable name {name!r}")
    return Expr("var", name=name)


def add(*terms: Expr) -> Expr:
    if not terms:
        return const(0)
    if len(terms) == 1:
        return terms[0]
    return Expr("sum", terms)


def mul(*factors: Expr) -> Expr:
    if not factors:
        return const(1)
    if len(factors) == 1:
        return factors[0]
    return Expr("product", factors)


def power(base: Expr, k: int) -> Expr:
    return Expr("pow", (base,), value=int(k))


def neg(e: Expr) -> Expr:
    return Expr("neg", (e,))


def func(name: str, arg: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    return Expr("func", (arg,), name=name)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float, Fraction)):
        return const(x)
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


def sin(e) -> Expr:
    return normalize(func("sin", as_expr(e)))


def cos(e) -> Expr:
    return normalize(func("cos", as_expr(e)))


def exp(e) -> Expr:
    return normalize(func("exp", as_expr(e)))


def log(e) -> Expr:
    return normalize(func("log", as_expr(e)))


def sqrt(e) -> Expr:
    return normalize(func("sqrt", as_expr(e)))


# ---------------------------------------------------------------------------
# sparse polynomial over atoms
#
# Poly = dict[Monomial, Fraction]; Monomial = tuple[(atom, exponent), ...]
# sorted by atom.sort_key.  Sum atoms only ever carry negative exponents.

_ONE = Fraction(1)


def _mono_key(m) -> tuple:
    return tuple((a.sort_key, k) for a, k in m)


def _mono_mul(m1, m2):
    if not m1:
        return m2
    if not m2:
        return m1
    acc: dict[Expr, int] = {}
    for a, k in m1:
        acc[a] = k
    for a, k in m2:
        acc[a] = acc.get(a, 0) + k
    return tuple(sorted(((a, k) for a, k in acc.items() if k != 0), key=lambda ak: ak[0].sort_key))


def _padd(p: dict, q: dict) -> dict:
    if not p:
        return dict(q)
    out = dict(p)
    for m, c in q.items():
        s = out.get(m, 0) + c
        if s:
            out[m] = s
        else:
            out.pop(m, None)
    return out


def _pscale(p: dict, c: Fraction) -> dict:
    if not c:
        return {}
    return {m: v * c for m, v in p.items()}


def _pmul(p: dict, q: dict) -> dict:
    out: dict = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            m = _mono_mul(m1, m2)
            s = out.get(m, 0) + c1 * c2
            if s:
                out[m] = s
            else:
                out.pop(m, None)
    return out


def _atom_poly(atom: Expr, k: int = 1) -> dict:
    if k == 0:
        return {(): _ONE}
    if atom.kind == "sum" and k > 0:
        return _ppow(_to_poly(atom), k)
    return {((atom, k),): _ONE}


def _ppow(p: dict, k: int) -> dict:
    if k == 0:
        return {(): _ONE}
    if k > 0:
        result = {(): _ONE}
        base = p
        while True:
            if k & 1:
                result = _pmul(result, base)
            k >>= 1
            if not k:
                return result
            base = _pmul(base, base)
    if not p:
        raise DomainError("division by zero")
    if len(p) == 1:
        (m, c), = p.items()
        out = {(): c**k}
        for a, e in m:
            out = _pmul(out, _atom_poly(a, e * k))
        return out
    lead = min(p, key=_mono_key)
    lc = p[lead]
    atom = _from_poly(_pscale(p, 1 / lc))
    return {((atom, k),): lc**k}


def _fold_func(name: str, arg: Expr) -> Fraction | None:
    if arg.kind != "const":
        return None
    v = arg.value
    if v == 0 and name == "sin":
        return Fraction(0)
    if v == 0 and name in ("cos", "exp"):
        return Fraction(1)
    if v == 1 and name == "log":
        return Fraction(0)
    if name == "sqrt" and v >= 0:
        n, d = math.isqrt(v.numerator), math.isqrt(v.denominator)
        if n * n == v.numerator and d * d == v.denominator:
            return Fraction(n, d)
    return None


def _func_poly(name: str, arg: Expr) -> dict:
    folded = _fold_func(name, arg)
    if folded is not None:
        return {(): folded} if folded else {}
    return {((Expr("func", (arg,), name=name), 1),): _ONE}


def _factors(e: Expr, j: int = 1):
    """Multiplicative factors ``(poly, exponent)`` read off the tree shape."""
    if e.kind == "product":
        for c in e.children:
            yield from _factors(c, j)
    elif e.kind == "pow":
        yield from _factors(e.children[0], j * e.value)
    elif e.kind == "neg":
        yield {(): Fraction(-1)}, j
        yield from _factors(e.children[0], j)
    else:
        yield _to_poly(e), j


def _to_poly(e: Expr) -> dict:
    p = e._poly
    if p is not None:
        return p
    kind = e.kind
    if kind == "const":
        p = {(): e.value} if e.value else {}
    elif kind == "var":
        p = {((e, 1),): _ONE}
    elif kind == "sum":
        p = {}
        for c in e.children:
            p = _padd(p, _to_poly(c))
    elif kind == "product":
        p = {(): _ONE}
        for c in e.children:
            p = _pmul(p, _to_poly(c))
            if not p:
                break
    elif kind == "neg":
        p = _pscale(_to_poly(e.children[0]), Fraction(-1))
    elif kind == "pow" and e.value < 0:
        # invert factor by factor so 1/(a*b^2) keeps a and b as separate atoms
        p = {(): _ONE}
        for fp, j in _factors(e.children[0]):
            p = _pmul(p, _ppow(fp, j * e.value))
    elif kind == "pow":
        p = _ppow(_to_poly(e.children[0]), e.value)
    elif kind == "func":
        p = _func_poly(e.name, normalize(e.children[0]))
    else:  # pragma: no cover
        raise ValueError(f"bad node kind {kind!r}")
    object.__setattr__(e, "_poly", p)
    return p


def _from_poly(p: dict) -> Expr:
    terms = []
    for m in sorted(p, key=_mono_key):
        c = p[m]
        factors = [a if k == 1 else Expr("pow", (a,), value=k) for a, k in m]
        if not factors:
            term = Expr("const", value=c)
        elif c == 1:
            term = factors[0] if len(factors) == 1 else Expr("product", factors)
        elif c == -1:
            core = factors[0] if len(factors) == 1 else Expr("product", factors)
            term = Expr("neg", (core,))
        else:
            term = Expr("product", [Expr("const", value=c)] + factors)
        terms.append(term)
    if not terms:
        out = Expr("const", value=Fraction(0))
    elif len(terms) == 1:
        out = terms[0]
    else:
        out = Expr("sum", terms)
    object.__setattr__(out, "_poly", p)
    object.__setattr__(out, "_norm", True)
    return out


def normalize(e: Expr) -> Expr:
    """Canonical sum-of-products form; idempotent."""
    if e._norm:
        return e
    return _from_poly(_to_poly(e))


# ---------------------------------------------------------------------------
# printing


def _fmt_const(v: Fraction) -> str:
    if v.denominator == 1:
        return str(v.numerator)
    return f"{v.numerator}/{v.denominator}"


def _fmt_product(factors: Iterable[Expr]) -> str:
    negative = False
    num: list[str] = []
    den: list[Expr] = []

    def take(f: Expr) -> None:
        nonlocal negative
        if f.kind == "product":
            for g in f.children:
                take(g)
        elif f.kind == "neg":
            negative = not negative
            take(f.children[0])
        elif f.kind == "const":
            v = f.value
            if v < 0:
                negative = not negative
                v = -v
            if v.numerator != 1 or v == 0:
                num.append(str(v.numerator))
            if v.denominator != 1:
                den.append(Expr("const", value=Fraction(v.denominator)))
        elif f.kind == "pow" and f.value < 0:
            base = f.children[0]
            den.append(base if f.value == -1 else Expr("pow", (base,), value=-f.value))
        else:
            s = _fmt(f)
            if f.kind == "sum" or s.startswith("-"):
                s = f"({s})"
            num.append(s)

    for f in factors:
        take(f)
    text = "*".join(num) if num else "1"
    if den:
        parts = []
        for d in den:
            s = _fmt(d)
            atomic = d.kind in ("var", "func") or (d.kind == "pow" and d.value > 0)
            atomic = atomic or (d.kind == "const" and d.value.denominator == 1)
            parts.append(s if atomic and not s.startswith("-") else f"({s})")
        text += "/" + parts[0] if len(parts) == 1 else "/(" + "*".join(parts) + ")"
    return "-" + text if negative else text


def _fmt(e: Expr) -> str:
    kind = e.kind
    if kind == "const":
        return _fmt_const(e.value)
    if kind == "var":
        return e.name
    if kind == "func":
        return f"{e.name}({_fmt(e.children[0])})"
    if kind == "sum":
        out = _fmt(e.children[0])
        for c in e.children[1:]:
            s = _fmt(c)
            out += f" - {s[1:]}" if s.startswith("-") else f" + {s}"
        return out
    if kind == "neg":
        c = e.children[0]
        s = _fmt(c)
        if c.kind == "sum" or s.startswith("-"):
            return f"-({s})"
        return "-" + s
    if kind == "product":
        return _fmt_product(e.children)
    if kind == "pow":
        if e.value < 0:
            return _fmt_product([e])
        base = e.children[0]
        s = _fmt(base)
        if not (base.kind in ("var", "func") or (base.kind == "const" and base.value >= 0 and base.value.denominator == 1)):
            s = f"({s})"
        return f"{s}^{e.value}"
    raise ValueError(f"bad node kind {kind!r}")  # pragma: no cover


def to_text(e: Expr) -> str:
    """Render ``e`` in the input grammar; ``parse(to_text(e)) == normalize(e)``."""
    return _fmt(e)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while True:
        while pos < n and text[pos].isspace():
            pos += 1
        if pos >= n:
            break
        m = _TOKEN.match(text, pos)
        if not m:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos,
                                  {"number", "identifier", "operator"})
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, symbols: frozenset[str] | None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.symbols = symbols

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.peek()
        if val != value or kind != "op":
            raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", pos, {value})
        self.i += 1

    def parse(self) -> Expr:
        e = self.sum()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {val!r}", pos, {"+", "-", "*", "/", "^", "end of input"})
        return e

    def sum(self) -> Expr:
        terms = [self.product()]
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                rhs = self.product()
                terms.append(rhs if val == "+" else neg(rhs))
            else:
                return add(*terms)

    def product(self) -> Expr:
        factors = [self.unary()]
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.take()
                rhs = self.unary()
                factors.append(rhs if val == "*" else power(rhs, -1))
            else:
                return mul(*factors)

    def unary(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return neg(self.unary())
        if kind == "op" and val == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        kind, val, pos = self.peek()
        if kind == "op" and val == "^":
            self.take()
            exp_pos = self.peek()[2]
            k = normalize(self.unary())
            if k.kind != "const" or k.value.denominator != 1:
                raise NonIntegerExponent(f"exponent at position {exp_pos} is not an integer: {to_text(k)}")
            return power(base, int(k.value))
        return base

    def primary(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return const(Fraction(val))
        if kind == "id":
            if val not in FUNCTIONS and self.peek()[1] == "(":
                raise UnknownSymbol(f"unknown function {val!r} at position {pos}")
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.sum()
                self.expect(")")
                return func(val, arg)
            if self.symbols is not None and val not in self.symbols and val not in RESERVED:
                raise UnknownSymbol(f"unknown symbol {val!r} at position {pos}")
            return var(val)
        if kind == "op" and val == "(":
            e = self.sum()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", pos,
                              {"number", "identifier", "(", "-"})


def parse(text: str, symbols: Iterable[str] | None = None, *, raw: bool = False) -> Expr:
    """Parse infix text into a normalized expression.

    ``symbols`` restricts identifiers (``t`` and ``psi0`` are always allowed);
    ``None`` accepts any identifier.  ``raw=True`` skips normalization.
    """
    allowed = None if symbols is None else frozenset(symbols)
    tree = _Parser(text, allowed).parse()
    return tree if raw else normalize(tree)


# ---------------------------------------------------------------------------
# calculus and substitution


def _diff_atom(a: Expr, v: str) -> dict:
    if a.kind == "var":
        return {(): _ONE} if a.name == v else {}
    if a.kind == "sum":
        return _diff_poly(_to_poly(a), v)
    arg = a.children[0]
    darg = _diff_poly(_to_poly(arg), v)
    if not darg:
        return {}
    name = a.name
    if name == "sin":
        outer = _func_poly("cos", arg)
    elif name == "cos":
        outer = _pscale(_func_poly("sin", arg), Fraction(-1))
    elif name == "exp":
        outer = {((a, 1),): _ONE}
    elif name == "log":
        outer = _ppow(_to_poly(arg), -1)
    else:  # sqrt
        outer = {((a, -1),): Fraction(1, 2)}
    return _pmul(outer, darg)


def _diff_poly(p: dict, v: str) -> dict:
    out: dict = {}
    for m, c in p.items():
        for i, (a, k) in enumerate(m):
            da = _diff_atom(a, v)
            if not da:
                continue
            rest = m[:i] + (((a, k - 1),) if k != 1 else ()) + m[i + 1:]
            out = _padd(out, _pmul({rest: c * k}, da))
    return out


def differentiate(e: Expr, v: str, symbols: Iterable[str] | None = None) -> Expr:
    """Exact partial derivative of ``e`` with respect to variable ``v``."""
    if symbols is not None and v not in set(symbols) | RESERVED:
        raise UnknownSymbol(f"unknown symbol {v!r}")
    if not _IDENT.match(v) or v in FUNCTIONS:
        raise UnknownSymbol(f"not a variable name: {v!r}")
    return _from_poly(_diff_poly(_to_poly(e), v))


def _subst_poly(p: dict, mapping: Mapping[str, dict], memo: dict) -> dict:
    out: dict = {}
    for m, c in p.items():
        term = {(): c}
        for a, k in m:
            term = _pmul(term, _subst_atom_pow(a, k, mapping, memo))
            if not term:
                break
        out = _padd(out, term)
    return out


def _subst_atom_pow(a: Expr, k: int, mapping, memo) -> dict:
    base = memo.get(a)
    if base is None:
        if a.kind == "var":
            base = mapping[a.name] if a.name in mapping else {((a, 1),): _ONE}
        elif a.kind == "func":
            arg = _from_poly(_subst_poly(_to_poly(a.children[0]), mapping, memo))
            base = _func_poly(a.name, arg)
        else:
            base = _subst_poly(_to_poly(a), mapping, memo)
        memo[a] = base
    if len(base) == 1:
        (m, c), = base.items()
        if len(m) == 1 and m[0][1] == 1 and c == 1 and m[0][0] is a:
            return _atom_poly(a, k)
    return _ppow(base, k)


def substitute(e: Expr, mapping: Mapping[str, object]) -> Expr:
    """Simultaneous substitution of variables; the result is normalized."""
    polys = {name: _to_poly(normalize(as_expr(x))) for name, x in mapping.items()}
    if not polys or not (free_variables(e) & polys.keys()):
        return normalize(e)
    return _from_poly(_subst_poly(_to_poly(e), polys, {}))


def free_variables(e: Expr) -> frozenset[str]:
    """Variables appearing in the normalized form of ``e``."""
    out: set[str] = set()
    stack = [normalize(e)]
    while stack:
        n = stack.pop()
        if n.kind == "var":
            out.add(n.name)
        else:
            stack.extend(n.children)
    return frozenset(out)


# ---------------------------------------------------------------------------
# numeric evaluation


def _eval(e: Expr, b: Mapping[str, float]) -> tuple[float, float]:
    """Return (value, max absolute intermediate value)."""
    kind = e.kind
    if kind == "const":
        v = float(e.value)
        return v, abs(v)
    if kind == "var":
        try:
            v = b[e.name]
        except KeyError:
            raise UnboundVariable(f"variable {e.name!r} is not bound") from None
        v = float(v)
        if not math.isfinite(v):
            raise DomainError(f"non-finite value bound to {e.name!r}")
        return v, abs(v)
    if kind in ("sum", "product"):
        vals = [_eval(c, b) for c in e.children]
        if kind == "sum":
            v = math.fsum(x for x, _ in vals)
        else:
            v = 1.0
            for x, _ in vals:
                v *= x
        mag = max(max(m for _, m in vals), abs(v))
    elif kind == "neg":
        x, mag = _eval(e.children[0], b)
        v = -x
    elif kind == "pow":
        x, mag = _eval(e.children[0], b)
        k = e.value
        if x == 0.0 and k < 0:
            raise DomainError("division by zero")
        try:
            v = x**k
        except OverflowError as exc:
            raise DomainError(str(exc)) from None
        mag = max(mag, abs(v))
    else:
        x, mag = _eval(e.children[0], b)
        name = e.name
        if name == "log" and x <= 0:
            raise DomainError(f"log of non-positive value {x!r}")
        if name == "sqrt" and x < 0:
            raise DomainError(f"sqrt of negative value {x!r}")
        try:
            v = _MATH[name](x)
        except OverflowError as exc:
            raise DomainError(str(exc)) from None
        mag = max(mag, abs(v))
    if not math.isfinite(v):
        raise DomainError("non-finite intermediate value")
    return v, mag


_MATH: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
}


def evaluate(e: Expr, binding: Mapping[str, float]) -> float:
    """IEEE double value of ``e`` under ``binding``."""
    return _eval(normalize(e), binding)[0]


ZERO_TEST_POINTS = 32
ZERO_TEST_MAX_REDRAWS = 256
ZERO_TEST_RTOL = 1e-9


def random_sign_magnitude(rng: np.random.Generator, size=None):
    """Uniform draw from [-2, -0.1] U [0.1, 2]."""
    mag = rng.uniform(0.1, 2.0, size)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return mag * sign


def is_zero(e: Expr, seed: int = 0) -> bool:
    """Decide whether ``e`` is identically zero.

    Symbolic first; if the normal form is not the constant 0 the expression
    is evaluated at seeded random points (see :func:`random_sign_magnitude`).
    Raises :class:`Undecidable` if too many points hit a domain error.
    """
    n = normalize(e)
    if n.kind == "const":
        return n.value == 0
    names = sorted(free_variables(n), key=_natural)
    rng = np.random.default_rng(seed)
    accepted = redraws = 0
    while accepted < ZERO_TEST_POINTS:
        point = random_sign_magnitude(rng, len(names))
        binding = dict(zip(names, point.tolist()))
        try:
            v, mag = _eval(n, binding)
        except DomainError:
            redraws += 1
            if redraws > ZERO_TEST_MAX_REDRAWS:
                raise Undecidable(f"too many domain errors while zero-testing {to_text(n)}") from None
            continue
        if abs(v) > ZERO_TEST_RTOL * (1.0 + mag):
            return False
        accepted += 1
    return True


# ---------------------------------------------------------------------------
# compilation to a flat instruction tape


class CompiledExprs:
    """A batch of expressions compiled into one straight-line tape.

    Common subexpressions are shared.  ``tape`` holds instructions of the
    form ``(register, op, operands)``; calling the object runs the tape on a
    sequence of argument values and returns a list of floats.
    """

    def __init__(self, exprs: Sequence[Expr], argnames: Sequence[str], constants: Mapping[str, float] | None = None):
        self.argnames = tuple(argnames)
        self.exprs = tuple(normalize(e) for e in exprs)
        constants = dict(constants or {})
        index = {name: i for i, name in enumerate(self.argnames)}
        regs: dict[Expr, str] = {}
        tape: list[tuple[str, str, tuple]] = []

        def emit(n: Expr) -> str:
            r = regs.get(n)
            if r is not None:
                return r
            kind = n.kind
            if kind == "const":
                instr = ("const", (float(n.value),))
            elif kind == "var":
                if n.name in index:
                    instr = ("arg", (index[n.name],))
                elif n.name in constants:
                    instr = ("const", (float(constants[n.name]),))
                else:
                    raise UnboundVariable(f"variable {n.name!r} is neither an argument nor a constant")
            elif kind in ("sum", "product"):
                instr = (kind, tuple(emit(c) for c in n.children))
            elif kind == "neg":
                instr = ("neg", (emit(n.children[0]),))
            elif kind == "pow":
                instr = ("pow", (emit(n.children[0]), n.value))
            else:
                instr = (n.name, (emit(n.children[0]),))
            r = f"r{len(tape)}"
            tape.append((r, *instr))
            regs[n] = r
            return r

        outputs = [emit(e) for e in self.exprs]
        self.tape = tuple(tape)
        self.outputs = tuple(outputs)
        self._fn = self._build(tape, outputs)

    @staticmethod
    def _build(tape, outputs):
        lines = ["def _tape(v):"]
        for r, op, args in tape:
            if op == "const":
                rhs = repr(args[0])
            elif op == "arg":
                rhs = f"v[{args[0]}]"
            elif op == "sum":
                rhs = " + ".join(args)
            elif op == "product":
                rhs = " * ".join(args)
            elif op == "neg":
                rhs = f"-{args[0]}"
            elif op == "pow":
                base, k = args
                rhs = f"{base} * {base}" if k == 2 else f"{base} ** {k}"
            else:
                rhs = f"_{op}({args[0]})"
            lines.append(f"    {r} = {rhs}")
        lines.append(f"    return [{', '.join(outputs)}]")
        namespace = {f"_{k}": f for k, f in _MATH.items()}
        exec(compile("\n".join(lines), "<pmpcm-tape>", "exec"), namespace)
        return namespace["_tape"]

    def __call__(self, values: Sequence[float]) -> list[float]:
        try:
            return self._fn(values)
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise DomainError(str(exc)) from None


def compile_exprs(exprs: Sequence[Expr], argnames: Sequence[str], constants: Mapping[str, float] | None = None) -> CompiledExprs:
    return CompiledExprs(exprs, argnames, constants)
