"""Problem builders and independent oracles shared by the test modules."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from pmpcm import expr as ex
from pmpcm.ocp import make_problem

EQ8 = "-psi1*x2 + psi2*x1 - psi3*x4 + psi4*x3"


def quartic(b: float = 5.0):
    return make_problem(
        "quartic-oscillator", 4, 2, "u1^2 + u2^2",
        ["x3", "x4", "-x1*(x1^2 + x2^2) + u1", "-x2*(x1^2 + x2^2) + u2"], 0.0, b,
    )


def scalar():
    return make_problem("scalar", 1, 1, "u1^2", ["u1"], 0.0, 1.0)


def bilinear_growth():
    return make_problem("bilinear-growth", 1, 1, "u1^2", ["u1*x1"], 0.0, 2.0)


def time_scaling():
    return make_problem("time-scaling", 1, 1, "((t*x1)^2 + u1^2)/t", ["u1/t^2"], 1.0, 2.0)


def cubics(X: str, c=(1, 2), b: float = 2.0):
    """Two states, len(c) controls; X is X(x1) written in x1."""
    drive = " + ".join(f"{ci}*({X})*u{j}" for j, ci in enumerate(c, start=1))
    L = " + ".join(f"u{j}^2" for j in range(1, len(c) + 1))
    return make_problem(f"cubics[{X}]", 2, len(c), L, ["x2", drive], 0.0, b)


def _rat(rng) -> Fraction:
    return Fraction(int(rng.integers(-4, 5)), 4)


def random_quadratic_problem(seed: int, n: int | None = None, r: int | None = None, autonomous: bool = True):
    """Random problem with dynamics affine in u and a cost quadratic in u.

    Coefficients are small rationals; the horizon is [0, 1].
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4)) if n is None else n
    r = int(rng.integers(1, 3)) if r is None else r
    xs = [ex.var(f"x{i}") for i in range(1, n + 1)]
    us = [ex.var(f"u{j}") for j in range(1, r + 1)]
    t = ex.var("t")

    def small_poly():
        terms = [ex.const(_rat(rng))]
        terms += [ex.mul(ex.const(_rat(rng)), x) for x in xs]
        i, j = rng.integers(0, n, 2)
        terms.append(ex.mul(ex.const(_rat(rng) / 2), xs[i], xs[j]))
        if not autonomous:
            terms.append(ex.mul(ex.const(_rat(rng)), t, xs[int(rng.integers(0, n))]))
        return ex.add(*terms)

    weights = [Fraction(int(rng.integers(1, 4)), 2) for _ in us]
    L = ex.add(*[ex.mul(ex.const(w), ex.power(u, 2)) for w, u in zip(weights, us)], small_poly())
    phi = []
    for _ in range(n):
        drive = [ex.mul(ex.const(_rat(rng)), u) for u in us]
        phi.append(ex.add(small_poly(), *drive))
    return make_problem(f"random-{seed}", n, r, ex.normalize(L), [ex.normalize(f) for f in phi], 0.0, 1.0)


def random_tree(rng, depth: int, names=("x1", "x2", "psi1", "u1", "t"), funcs=("sin", "cos", "exp")):
    """Raw (unnormalized) random expression tree of bounded depth."""
    if depth <= 0 or rng.random() < 0.25:
        if rng.random() < 0.35:
            return ex.const(Fraction(int(rng.integers(-5, 6)), int(rng.integers(1, 4))))
        return ex.var(str(rng.choice(names)))
    kind = rng.choice(["sum", "product", "neg", "pow", "func"], p=[0.3, 0.3, 0.1, 0.15, 0.15])
    if kind == "sum":
        return ex.add(*[random_tree(rng, depth - 1, names, funcs) for _ in range(int(rng.integers(2, 4)))])
    if kind == "product":
        return ex.mul(*[random_tree(rng, depth - 1, names, funcs) for _ in range(2)])
    if kind == "neg":
        return ex.neg(random_tree(rng, depth - 1, names, funcs))
    if kind == "pow":
        return ex.power(random_tree(rng, depth - 1, names, funcs), int(rng.integers(1, 4)))
    return ex.func(str(rng.choice(funcs)), random_tree(rng, depth - 1, names, funcs))


def central_difference(e, var: str, binding: dict[str, float], h: float = 1e-6) -> float:
    """Independent derivative oracle: (e(v + h) - e(v - h)) / 2h."""
    step = h * max(1.0, abs(binding[var]))
    hi = dict(binding, **{var: binding[var] + step})
    lo = dict(binding, **{var: binding[var] - step})
    return (ex.evaluate(e, hi) - ex.evaluate(e, lo)) / (2 * step)


def text_eval(text: str, binding: dict[str, float]) -> float:
    """Evaluate expression text with Python itself (independent of the parser)."""
    import math

    env = {"sin": math.sin, "cos": math.cos, "exp": math.exp, "log": math.log, "sqrt": math.sqrt}
    env.update(binding)
    return eval(text.replace("^", "**"), {"__builtins__": {}}, env)


def rk4(fun, y0, t0: float, t1: float, h: float):
    """Fixed-step classical Runge-Kutta; returns the state at t1."""
    steps = int(round((t1 - t0) / h))
    h = (t1 - t0) / steps
    y = list(y0)
    t = t0
    n = len(y)
    for _ in range(steps):
        k1 = fun(t, y)
        k2 = fun(t + h / 2, [y[i] + h / 2 * k1[i] for i in range(n)])
        k3 = fun(t + h / 2, [y[i] + h / 2 * k2[i] for i in range(n)])
        k4 = fun(t + h, [y[i] + h * k3[i] for i in range(n)])
        y = [y[i] + h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(n)]
        t += h
    return y


def quartic_rhs(t, y):
    """Hand-written extremal field of the quartic oscillator with psi0 = -1."""
    x1, x2, x3, x4, p1, p2, p3, p4 = y
    r2 = x1 * x1 + x2 * x2
    return [
        x3,
        x4,
        -x1 * r2 + p3 / 2,
        -x2 * r2 + p4 / 2,
        p3 * (3 * x1 * x1 + x2 * x2) + 2 * p4 * x1 * x2,
        2 * p3 * x1 * x2 + p4 * (x1 * x1 + 3 * x2 * x2),
        -p1,
        -p2,
    ]


def proportional(a, b, names=None) -> bool:
    """True when ``a = k*b`` for a small rational ``k`` (found numerically, confirmed by is_zero)."""
    rng = np.random.default_rng(99)
    names = sorted(ex.free_variables(a) | ex.free_variables(b)) if names is None else names
    binding = {v: (1.37 if v == "t" else float(ex.random_sign_magnitude(rng))) for v in names}
    vb = ex.evaluate(b, binding)
    if vb == 0:
        return False
    k = Fraction(ex.evaluate(a, binding) / vb).limit_denominator(1000)
    return k != 0 and ex.is_zero(ex.normalize(a - k * b))
