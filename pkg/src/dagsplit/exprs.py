"""Deterministic expression trees.

Expressions are immutable trees of constants, named references, and a small
fixed set of operators.  They appear in two places: as distribution
parameters and as the defining formula of deterministic nodes.  The textual
form is an s-expression, e.g. ``(+ (* c a) (* d b) (* e (- 1 a b)))``;
``parse`` and ``printout`` are exact inverses on canonical text.

Vector and matrix literals are written with constructor heads so that node
names may contain brackets: ``(vec 1.0 -14.0)``, ``(mat (vec 200 0) (vec 0 0.2))``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping

import numpy as np

from .errors import ExpressionDomainError, ModelError

__all__ = [
    "Expr",
    "Const",
    "Ref",
    "Call",
    "as_expr",
    "parse",
    "printout",
    "refs",
    "rename_refs",
    "infer_shape",
    "compile_expr",
    "evaluate",
]

Shape = tuple[int, ...]


@dataclass(frozen=True)
class Const:
    # scalar float, or nested tuples for vector / matrix literals
    value: float | tuple


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Call:
    op: str
    args: tuple["Expr", ...]


Expr = Const | Ref | Call


@dataclass(frozen=True)
class _Shaped:
    """Internal leaf carrying a pre-computed shape (compiler use only)."""

    shape: Shape


# op -> (min arity, max arity or None for variadic)
_OPS: dict[str, tuple[int, int | None]] = {
    "+": (2, None),
    "-": (2, None),
    "*": (2, None),
    "/": (2, 2),
    "neg": (1, 1),
    "log": (1, 1),
    "exp": (1, 1),
    "logit": (1, 1),
    "inv-logit": (1, 1),
    "minv": (1, 1),
    "dot": (2, 2),
    "vec": (1, None),
    "mat": (1, None),
}

_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def as_expr(x) -> Expr:
    """Coerce a float, int, name, sequence, or Expr into an Expr."""
    if isinstance(x, (Const, Ref, Call)):
        return x
    if isinstance(x, bool):
        raise ModelError("booleans are not expression constants")
    if isinstance(x, (int, float)):
        return Const(float(x))
    if isinstance(x, str):
        return Ref(x)
    if isinstance(x, (list, tuple, np.ndarray)):
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 1:
            return Const(tuple(float(v) for v in arr))
        if arr.ndim == 2:
            return Const(tuple(tuple(float(v) for v in row) for row in arr))
        raise ModelError(f"constants must be scalar, vector, or matrix, got ndim={arr.ndim}")
    raise ModelError(f"cannot interpret {x!r} as an expression")


def const_shape(value) -> Shape:
    if isinstance(value, float):
        return ()
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return (len(value), len(value[0]))
    return (len(value),)


def const_array(value):
    """Runtime form of a Const payload: float or ndarray."""
    if isinstance(value, float):
        return value
    return np.asarray(value, dtype=float)


# ---------------------------------------------------------------------------
# parsing / printing


def _tokens(text: str) -> Iterator[str]:
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            yield ch
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            yield text[i:j]
            i = j


def parse(text: str) -> Expr:
    """Parse the s-expression form. Inverse of :func:`printout`."""
    toks = list(_tokens(text))
    pos = 0

    def expr() -> Expr:
        nonlocal pos
        if pos >= len(toks):
            raise ModelError(f"unexpected end of expression: {text!r}")
        tok = toks[pos]
        pos += 1
        if tok == ")":
            raise ModelError(f"unexpected ')' in {text!r}")
        if tok != "(":
            return _atom(tok)
        if pos >= len(toks) or toks[pos] in "()":
            raise ModelError(f"missing operator after '(' in {text!r}")
        op = toks[pos]
        pos += 1
        args = []
        while pos < len(toks) and toks[pos] != ")":
            args.append(expr())
        if pos >= len(toks):
            raise ModelError(f"unterminated '(' in {text!r}")
        pos += 1  # consume ')'
        return _call(op, tuple(args), text)

    out = expr()
    if pos != len(toks):
        raise ModelError(f"trailing tokens after expression: {text!r}")
    return out


def _atom(tok: str) -> Expr:
    if _NUMBER.match(tok):
        return Const(float(tok))
    return Ref(tok)


def _call(op: str, args: tuple[Expr, ...], text: str) -> Expr:
    if op not in _OPS:
        raise ModelError(f"unknown operator {op!r} in {text!r}")
    lo, hi = _OPS[op]
    if len(args) < lo or (hi is not None and len(args) > hi):
        raise ModelError(f"operator {op!r} got {len(args)} args in {text!r}")
    # fold constant vector/matrix literals so printing round-trips
    if op == "vec" and all(isinstance(a, Const) and isinstance(a.value, float) for a in args):
        return Const(tuple(a.value for a in args))
    if op == "mat" and all(
        isinstance(a, Const) and isinstance(a.value, tuple) and a.value and not isinstance(a.value[0], tuple)
        for a in args
    ):
        rows = [a.value for a in args]
        if len({len(r) for r in rows}) != 1:
            raise ModelError(f"ragged matrix literal in {text!r}")
        return Const(tuple(rows))
    return Call(op, args)


def printout(e: Expr) -> str:
    """Canonical text form. ``parse(printout(e)) == e`` for well-formed trees."""
    if isinstance(e, Const):
        v = e.value
        if isinstance(v, float):
            return repr(v)
        if v and isinstance(v[0], tuple):
            rows = " ".join("(vec " + " ".join(repr(x) for x in row) + ")" for row in v)
            return f"(mat {rows})"
        return "(vec " + " ".join(repr(x) for x in v) + ")"
    if isinstance(e, Ref):
        return e.name
    return "(" + e.op + " " + " ".join(printout(a) for a in e.args) + ")"


# ---------------------------------------------------------------------------
# structure helpers


def refs(e: Expr) -> set[str]:
    """All names referenced by the tree."""
    if isinstance(e, Ref):
        return {e.name}
    if isinstance(e, Call):
        out: set[str] = set()
        for a in e.args:
            out |= refs(a)
        return out
    return set()


def rename_refs(e: Expr, mapping: Mapping[str, str]) -> Expr:
    """Rewrite references according to ``mapping`` (missing names unchanged)."""
    if isinstance(e, Ref):
        new = mapping.get(e.name)
        return Ref(new) if new is not None else e
    if isinstance(e, Call):
        return Call(e.op, tuple(rename_refs(a, mapping) for a in e.args))
    return e


# ---------------------------------------------------------------------------
# shape inference


def infer_shape(e: Expr, env: Mapping[str, Shape]) -> Shape:
    """Static shape of the expression; raises ModelError on any mismatch."""
    if isinstance(e, _Shaped):
        return e.shape
    if isinstance(e, Const):
        return const_shape(e.value)
    if isinstance(e, Ref):
        if e.name not in env:
            raise ModelError(f"reference to unknown name {e.name!r}")
        return env[e.name]
    shapes = [infer_shape(a, env) for a in e.args]
    op = e.op
    if op in ("+", "-"):
        if len(set(shapes)) != 1:
            raise ModelError(f"{op!r} requires matching shapes, got {shapes}")
        return shapes[0]
    if op == "*":
        if all(s == () for s in shapes):
            return ()
        if len(shapes) == 2 and () in shapes:
            return shapes[0] if shapes[1] == () else shapes[1]
        raise ModelError(f"'*' takes scalars, or one scalar and one array, got {shapes}")
    if op == "/":
        if shapes[1] != ():
            raise ModelError(f"'/' requires a scalar divisor, got {shapes[1]}")
        return shapes[0]
    if op == "neg":
        return shapes[0]
    if op in ("log", "exp", "logit", "inv-logit"):
        if shapes[0] != ():
            raise ModelError(f"{op!r} takes a scalar, got {shapes[0]}")
        return ()
    if op == "minv":
        s = shapes[0]
        if len(s) != 2 or s[0] != s[1]:
            raise ModelError(f"'minv' takes a square matrix, got {s}")
        return s
    if op == "dot":
        a, b = shapes
        if len(a) == 1 and a == b:
            return ()
        if len(a) == 2 and len(b) == 1 and a[1] == b[0]:
            return (a[0],)
        raise ModelError(f"'dot' takes (d,)x(d,) or (d,m)x(m,), got {a} and {b}")
    if op == "vec":
        if any(s != () for s in shapes):
            raise ModelError("'vec' components must be scalars")
        return (len(shapes),)
    if op == "mat":
        if len(set(shapes)) != 1 or len(shapes[0]) != 1:
            raise ModelError("'mat' rows must be equal-length vectors")
        return (len(shapes), shapes[0][0])
    raise ModelError(f"unknown operator {op!r}")


# ---------------------------------------------------------------------------
# compilation to python closures


def _ilogit(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _minv(m):
    try:
        return np.linalg.inv(m)
    except np.linalg.LinAlgError as exc:
        raise ExpressionDomainError(f"singular matrix in minv: {exc}") from None


def _adiv(a, b: float):
    if b == 0.0:
        raise ZeroDivisionError("array division by zero")
    return a / b


class _Compiler:
    def __init__(self, env: Mapping[str, Shape], consts: Mapping[str, object]):
        self.env = env
        self.consts = dict(consts)
        self.namespace: dict = {
            "_log": math.log,
            "_exp": math.exp,
            "_ilogit": _ilogit,
            "_minv": _minv,
            "_adiv": _adiv,
            "_np": np,
        }
        self.n_cells = 0

    def cell(self, value) -> str:
        name = f"_k{self.n_cells}"
        self.n_cells += 1
        self.namespace[name] = value
        return name

    def emit(self, e: Expr) -> tuple[str, Shape]:
        if isinstance(e, Const):
            shape = const_shape(e.value)
            if shape == ():
                return repr(e.value), ()
            return self.cell(const_array(e.value)), shape
        if isinstance(e, Ref):
            if e.name in self.consts:
                ce = as_expr(self.consts[e.name])
                if not isinstance(ce, Const):
                    raise ModelError(f"constant {e.name!r} is not a literal")
                return self.emit(ce)
            if e.name not in self.env:
                raise ModelError(f"reference to unknown name {e.name!r}")
            return f"s[{e.name!r}]", self.env[e.name]
        srcs_shapes = [self.emit(a) for a in e.args]
        srcs = [s for s, _ in srcs_shapes]
        shape = infer_shape(Call(e.op, tuple(_Shaped(sh) for _, sh in srcs_shapes)), {})
        op = e.op
        if op == "+":
            return "(" + " + ".join(srcs) + ")", shape
        if op == "-":
            return "(" + " - ".join(srcs) + ")", shape
        if op == "*":
            return "(" + " * ".join(srcs) + ")", shape
        if op == "/":
            if srcs_shapes[0][1] == ():
                return f"({srcs[0]} / {srcs[1]})", shape
            return f"_adiv({srcs[0]}, {srcs[1]})", shape
        if op == "neg":
            return f"(-{srcs[0]})", shape
        if op == "log":
            return f"_log({srcs[0]})", shape
        if op == "exp":
            return f"_exp({srcs[0]})", shape
        if op == "logit":
            return f"_log({srcs[0]} / (1.0 - {srcs[0]}))", shape
        if op == "inv-logit":
            return f"_ilogit({srcs[0]})", shape
        if op == "minv":
            return f"_minv({srcs[0]})", shape
        if op == "dot":
            return f"_np.dot({srcs[0]}, {srcs[1]})", shape
        if op in ("vec", "mat"):
            return "_np.array([" + ", ".join(srcs) + "])", shape
        raise ModelError(f"unknown operator {op!r}")


def compile_expr(
    e: Expr,
    env: Mapping[str, Shape],
    consts: Mapping[str, object] | None = None,
) -> tuple[Callable, Shape]:
    """Compile to a closure ``f(state) -> value``.

    ``state`` maps node names to floats / ndarrays.  Constants named in
    ``consts`` are inlined at compile time.  Domain violations (division by
    zero, log outside its domain, non-finite results) raise
    ExpressionDomainError rather than propagating silently.
    """
    comp = _Compiler(env, consts or {})
    src, shape = comp.emit(e)
    code = f"def _f(s):\n    return {src}\n"
    ns = dict(comp.namespace)
    exec(code, ns)
    raw = ns["_f"]
    text = printout(e)

    if shape == ():

        def run(state):
            try:
                v = raw(state)
            except (ZeroDivisionError, ValueError, OverflowError) as exc:
                raise ExpressionDomainError(f"{text}: {exc}") from None
            v = float(v)
            if not math.isfinite(v):
                raise ExpressionDomainError(f"{text}: non-finite result {v!r}")
            return v

    else:

        def run(state):
            try:
                v = raw(state)
            except (ZeroDivisionError, ValueError, OverflowError) as exc:
                raise ExpressionDomainError(f"{text}: {exc}") from None
            if not np.isfinite(v).all():
                raise ExpressionDomainError(f"{text}: non-finite result")
            return v

    return run, shape


def evaluate(e: Expr, env: Mapping[str, object]):
    """One-shot evaluation against a name -> value mapping."""
    state = {}
    shapes: dict[str, Shape] = {}
    for k, v in env.items():
        if np.ndim(v) == 0:
            state[k] = float(v)
            shapes[k] = ()
        else:
            arr = np.asarray(v, dtype=float)
            state[k] = arr
            shapes[k] = arr.shape
    fn, _ = compile_expr(e, shapes, {})
    return fn(state)
