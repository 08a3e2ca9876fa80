"""Small arithmetic expression language for model definition files.

Expressions are JSON-native nested lists:

    1.5                      -> constant
    "V"                      -> variable
    ["+", a, b]              -> a + b         (also "-", "*", "/")
    ["neg", a]               -> -a
    ["pow", a, n]            -> a ** n        (n must be a constant)
    ["exp", a], ["tanh", a], ["log", a], ["sqrt", a]
    ["linexp", x, s]         -> x / (1 - exp(-x/s)),  s a positive constant
    ["expm1r", x, s]         -> x / (exp(x/s) - 1),   s a positive constant

``linexp`` and ``expm1r`` are the two removable-singularity shapes that occur
in Hodgkin-Huxley style rate functions.  Both are evaluated by a two-term
series branch within SINGULAR_WINDOW of x = 0 so the quotient never suffers
catastrophic cancellation; the two branches agree to ~1e-11 relative at the
switch point.

Expressions can be differentiated symbolically (``diff``) and compiled to
plain Python functions over numpy arrays (``compile_exprs``).  Compilation is
deterministic: the generated source depends only on the expression tree, so a
tree that round-trips through JSON evaluates bit-identically.
"""

from __future__ import annotations

import math

import numpy as np

# Width of the series branch around a removable singularity, in mV.
SINGULAR_WINDOW = 1e-4

_BINOPS = {"+", "-", "*", "/"}
_FUNCS = {"neg", "exp", "tanh", "log", "sqrt"}
_SAFE = {"linexp", "expm1r"}


def linexp(x, s):
    """x / (1 - exp(-x/s)), series s*(1 + u/2) for |x| < SINGULAR_WINDOW."""
    u = np.asarray(x) / s
    small = np.abs(np.real(np.asarray(x))) < SINGULAR_WINDOW
    xs = np.where(small, s, x)
    direct = xs / (-np.expm1(-xs / s))
    series = s * (1.0 + 0.5 * u)
    return np.where(small, series, direct)


def dlinexp(x, s):
    """d/dx of linexp; series 1/2 + u/6 near x = 0."""
    u = np.asarray(x) / s
    small = np.abs(np.real(np.asarray(x))) < SINGULAR_WINDOW
    us = np.where(small, 1.0, u)
    w = np.exp(-us)
    direct = (1.0 - w - us * w) / (-np.expm1(-us)) ** 2
    series = 0.5 + u / 6.0
    return np.where(small, series, direct)


def expm1r(x, s):
    """x / (exp(x/s) - 1), series s*(1 - u/2) for |x| < SINGULAR_WINDOW."""
    u = np.asarray(x) / s
    small = np.abs(np.real(np.asarray(x))) < SINGULAR_WINDOW
    xs = np.where(small, s, x)
    direct = xs / np.expm1(xs / s)
    series = s * (1.0 - 0.5 * u)
    return np.where(small, series, direct)


def dexpm1r(x, s):
    """d/dx of expm1r; series -1/2 + u/6 near x = 0."""
    u = np.asarray(x) / s
    small = np.abs(np.real(np.asarray(x))) < SINGULAR_WINDOW
    us = np.where(small, 1.0, u)
    w = np.exp(us)
    direct = (w - 1.0 - us * w) / np.expm1(us) ** 2
    series = -0.5 + u / 6.0
    return np.where(small, series, direct)


_RUNTIME = {
    "exp": np.exp,
    "tanh": np.tanh,
    "log": np.log,
    "sqrt": np.sqrt,
    "linexp": linexp,
    "expm1r": expm1r,
    "dlinexp": dlinexp,
    "dexpm1r": dexpm1r,
}


class ExprError(ValueError):
    """Malformed expression tree."""


def validate(expr, variables):
    """Check an expression tree; raises ExprError on unknown symbols/ops."""
    if isinstance(expr, bool):
        raise ExprError(f"booleans are not expressions: {expr!r}")
    if isinstance(expr, (int, float)):
        return
    if isinstance(expr, str):
        if expr not in variables:
            raise ExprError(f"unknown symbol {expr!r}")
        return
    if not isinstance(expr, (list, tuple)) or not expr:
        raise ExprError(f"bad expression node: {expr!r}")
    op, *args = expr
    if op in _BINOPS:
        if len(args) != 2:
            raise ExprError(f"{op!r} takes 2 arguments, got {len(args)}")
        for a in args:
            validate(a, variables)
    elif op == "pow":
        if len(args) != 2 or not isinstance(args[1], (int, float)):
            raise ExprError("pow takes (expr, constant exponent)")
        validate(args[0], variables)
    elif op in _FUNCS:
        if len(args) != 1:
            raise ExprError(f"{op!r} takes 1 argument")
        validate(args[0], variables)
    elif op in _SAFE:
        if len(args) != 2 or not isinstance(args[1], (int, float)) or args[1] <= 0:
            raise ExprError(f"{op!r} takes (expr, positive constant scale)")
        validate(args[0], variables)
    else:
        raise ExprError(f"unknown operator {op!r}")


def symbols(expr, out=None):
    """Set of variable names referenced by an expression."""
    if out is None:
        out = set()
    if isinstance(expr, str):
        out.add(expr)
    elif isinstance(expr, (list, tuple)):
        for a in expr[1:]:
            symbols(a, out)
    return out


def _is_const(expr, value=None):
    if isinstance(expr, (int, float)) and not isinstance(expr, bool):
        return value is None or expr == value
    return False


def diff(expr, var):
    """Symbolic derivative of an expression tree with respect to ``var``."""
    if isinstance(expr, (int, float)):
        return 0.0
    if isinstance(expr, str):
        return 1.0 if expr == var else 0.0
    op, *args = expr
    if op == "+":
        return _add(diff(args[0], var), diff(args[1], var))
    if op == "-":
        return _sub(diff(args[0], var), diff(args[1], var))
    if op == "*":
        a, b = args
        return _add(_mul(diff(a, var), b), _mul(a, diff(b, var)))
    if op == "/":
        a, b = args
        da, db = diff(a, var), diff(b, var)
        return _div(_sub(_mul(da, b), _mul(a, db)), ["pow", b, 2])
    if op == "neg":
        return _neg(diff(args[0], var))
    if op == "pow":
        a, n = args
        return _mul(_mul(float(n), ["pow", a, n - 1] if n != 2 else a), diff(a, var))
    if op == "exp":
        return _mul(expr, diff(args[0], var))
    if op == "tanh":
        return _mul(_sub(1.0, ["pow", expr, 2]), diff(args[0], var))
    if op == "log":
        return _div(diff(args[0], var), args[0])
    if op == "sqrt":
        return _div(diff(args[0], var), _mul(2.0, expr))
    if op == "linexp":
        return _mul(["dlinexp", args[0], args[1]], diff(args[0], var))
    if op == "expm1r":
        return _mul(["dexpm1r", args[0], args[1]], diff(args[0], var))
    if op in ("dlinexp", "dexpm1r"):
        raise ExprError(f"second derivatives of {op} are not supported")
    raise ExprError(f"unknown operator {op!r}")


# -- constant-folding constructors (keep generated code small) --------------

def _add(a, b):
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return a + b
    return ["+", a, b]


def _sub(a, b):
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return a - b
    if _is_const(a, 0.0):
        return _neg(b)
    return ["-", a, b]


def _mul(a, b):
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return 0.0
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return a * b
    return ["*", a, b]


def _div(a, b):
    if _is_const(a, 0.0):
        return 0.0
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return a / b
    return ["/", a, b]


def _neg(a):
    if _is_const(a):
        return -a
    if isinstance(a, list) and a[0] == "neg":
        return a[1]
    return ["neg", a]


def to_source(expr):
    """Deterministic, fully parenthesized Python source for an expression."""
    if isinstance(expr, (int, float)):
        return repr(float(expr))
    if isinstance(expr, str):
        return expr
    op, *args = expr
    if op in _BINOPS:
        return f"({to_source(args[0])} {op} {to_source(args[1])})"
    if op == "neg":
        return f"(-{to_source(args[0])})"
    if op == "pow":
        return f"({to_source(args[0])} ** {repr(float(args[1]))})"
    return f"{op}({', '.join(to_source(a) for a in args)})"


def _exp_s(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _expm1_s(x):
    try:
        return math.expm1(x)
    except OverflowError:
        return math.inf


def _linexp_s(x, s):
    if abs(x) < SINGULAR_WINDOW:
        return s + 0.5 * x
    return x / -_expm1_s(-x / s)


def _dlinexp_s(x, s):
    u = x / s
    if abs(x) < SINGULAR_WINDOW:
        return 0.5 + u / 6.0
    w = _exp_s(-u)
    return (1.0 - w - u * w) / _expm1_s(-u) ** 2


def _expm1r_s(x, s):
    if abs(x) < SINGULAR_WINDOW:
        return s - 0.5 * x
    return x / _expm1_s(x / s)


def _dexpm1r_s(x, s):
    u = x / s
    if abs(x) < SINGULAR_WINDOW:
        return -0.5 + u / 6.0
    w = _exp_s(u)
    return (w - 1.0 - u * w) / _expm1_s(u) ** 2


_RUNTIME_SCALAR = {
    "exp": _exp_s,
    "tanh": math.tanh,
    "log": math.log,
    "sqrt": math.sqrt,
    "linexp": _linexp_s,
    "expm1r": _expm1r_s,
    "dlinexp": _dlinexp_s,
    "dexpm1r": _dexpm1r_s,
}


def compile_exprs(named_exprs, argnames, fname="_expr_fn", scalar=False):
    """Compile ``{name: expr}`` into one function returning a tuple.

    The generated function takes ``argnames`` positionally and returns the
    expression values in dict order.  Works elementwise on numpy arrays and
    on complex inputs.
    """
    lines = [f"def {fname}({', '.join(argnames)}):"]
    for name, expr in named_exprs.items():
        lines.append(f"    _v_{name} = {to_source(expr)}")
    lines.append(f"    return ({', '.join('_v_' + n for n in named_exprs)},)")
    src = "\n".join(lines)
    ns = dict(_RUNTIME_SCALAR if scalar else _RUNTIME)
    exec(compile(src, f"<{fname}>", "exec"), ns)  # noqa: S102 - trusted AST only
    fn = ns[fname]
    fn.__source__ = src
    return fn


def evaluate(expr, env):
    """Interpret a single expression against ``env`` (dict of values)."""
    fn = compile_exprs({"out": expr}, sorted(symbols(expr)))
    return fn(*(env[s] for s in sorted(symbols(expr))))[0]
