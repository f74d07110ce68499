"""Sandboxed arithmetic expressions for coefficient functions in configs.

Grammar: numbers, the variables ``p0 .. pn`` and ``t``, the operators
``+ - * / **`` and unary minus, and the functions ``exp``, ``log``,
``sqrt``, ``min``, ``max`` and ``abs``.  Anything else is rejected when the
expression is compiled, before it ever runs.
"""

from __future__ import annotations

import ast
import operator
import re

import numpy as np

from .errors import ValidationError

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {
    "exp": (np.exp, 1),
    "log": (np.log, 1),
    "sqrt": (np.sqrt, 1),
    "abs": (np.abs, 1),
    "min": (np.minimum, 2),
    "max": (np.maximum, 2),
}
_PRICE = re.compile(r"p(\d+)$")


class Expression:
    """A validated expression evaluated on ``(p, t)`` with ``p`` of shape ``(N, n+1)``."""

    def __init__(self, source, n: int):
        self.source = str(source)
        self.n = n
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ValidationError(f"cannot parse expression {self.source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body
        self.constant = not any(
            isinstance(node, ast.Name) for node in ast.walk(tree.body)
        )

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ValidationError(f"only numeric literals are allowed in {self.source!r}")
        elif isinstance(node, ast.Name):
            self._variable(node.id)
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ValidationError(f"operator not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNARY:
                raise ValidationError(f"operator not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise ValidationError(f"unknown function in {self.source!r}")
            arity = _FUNCS[node.func.id][1]
            if len(node.args) != arity:
                raise ValidationError(f"{node.func.id} takes {arity} argument(s) in {self.source!r}")
            for arg in node.args:
                self._check(arg)
        else:
            raise ValidationError(f"unsupported syntax {type(node).__name__} in {self.source!r}")

    def _variable(self, name):
        if name == "t":
            return
        match = _PRICE.match(name)
        if not match or int(match.group(1)) > self.n:
            raise ValidationError(f"unknown variable {name!r}; expected t or p0..p{self.n}")

    def _eval(self, node, p, t):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return t if node.id == "t" else p[..., int(node.id[1:])]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, p, t), self._eval(node.right, p, t))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, p, t))
        fn = _FUNCS[node.func.id][0]
        return fn(*(self._eval(a, p, t) for a in node.args))

    def __call__(self, p, t):
        p = np.asarray(p, dtype=float)
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, p, np.asarray(t, dtype=float))
        if self.constant:
            return np.asarray(out, dtype=float)
        return np.broadcast_to(np.asarray(out, dtype=float), p.shape[:-1]).copy()

    def __repr__(self):
        return f"Expression({self.source!r})"


def vector(sources, n: int, length: int):
    """Coefficient function stacking one expression per entry on the last axis."""
    exprs = [Expression(s, n) for s in _as_list(sources, length)]
    return _stack(exprs, (length,))


def matrix(sources, n: int, rows: int, cols: int):
    """Coefficient function for a ``rows x cols`` matrix of expressions."""
    if not isinstance(sources, (list, tuple)) or len(sources) != rows:
        raise ValidationError(f"matrix needs {rows} rows")
    exprs = [Expression(s, n) for row in sources for s in _as_list(row, cols)]
    return _stack(exprs, (rows, cols))


def scalar(source, n: int):
    expr = Expression(source, n)
    return lambda p, t: expr(p, t)


def _as_list(sources, length):
    if not isinstance(sources, (list, tuple)):
        sources = [sources]
    if len(sources) != length:
        raise ValidationError(f"expected {length} entries, got {len(sources)}")
    return list(sources)


def _stack(exprs, shape):
    if all(e.constant for e in exprs):
        value = np.array([float(e(np.zeros((1, e.n + 1)), 0.0)) for e in exprs]).reshape(shape)
        return lambda p, t: value

    def fn(p, t):
        p = np.asarray(p, dtype=float)
        lead = p.shape[:-1]
        vals = [np.broadcast_to(e(p, t), lead) for e in exprs]
        return np.stack(vals, axis=-1).reshape(lead + shape)

    return fn
