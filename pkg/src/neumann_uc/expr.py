"""A small arithmetic grammar for coefficient fields.

Expressions may use numbers, the coordinates ``x`` (and ``y`` in 2D),
``pi``, ``+ - * / **``, parentheses and the functions ``sin``, ``cos``, ``exp``.
Anything else is rejected before evaluation.
"""
from __future__ import annotations

import ast

import numpy as np

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTS = {"pi": np.pi}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide,
           ast.Pow: np.power}
_UNARY = {ast.UAdd: np.positive, ast.USub: np.negative}


class ExpressionError(ValueError):
    pass


def _check(node, names):
    if isinstance(node, ast.Expression):
        return _check(node.body, names)
    if isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ExpressionError(f"unsupported literal {node.value!r}")
        return
    if isinstance(node, ast.Name):
        if node.id not in names and node.id not in _CONSTS:
            raise ExpressionError(f"unknown name {node.id!r}")
        return
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check(node.left, names)
        _check(node.right, names)
        return
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        _check(node.operand, names)
        return
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes one argument")
        _check(node.args[0], names)
        return
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def _eval(node, env):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id] if node.id in env else _CONSTS[node.id]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNARY[type(node.op)](_eval(node.operand, env))
    return _FUNCS[node.func.id](_eval(node.args[0], env))


def compile_expression(text: str, dim: int = 1):
    """Parse ``text`` and return ``f(coords)`` evaluating it on an array ``(dim, *shape)``."""
    names = ("x", "y")[:dim]
    try:
        tree = ast.parse(str(text).strip(), mode="eval")
    except SyntaxError as e:
        raise ExpressionError(f"cannot parse {text!r}: {e.msg}") from None
    _check(tree, names)

    def f(coords):
        env = {n: coords[i] for i, n in enumerate(names)}
        with np.errstate(all="raise"):
            try:
                v = _eval(tree, env)
            except FloatingPointError as e:
                raise ExpressionError(f"{text!r}: {e}") from None
        return np.broadcast_to(np.asarray(v, dtype=float), coords.shape[1:]).copy()

    return f


def is_constant(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False
