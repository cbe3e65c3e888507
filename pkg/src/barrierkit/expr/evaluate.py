"""Evaluation of expression trees on floats, numpy arrays and dual numbers."""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import NumericError
from .ast import Binary, Const, Node, Unary, Var
from .dual import DualScalar

_NUMPY_UNARY = {
    "sin": np.sin, "cos": np.cos, "tanh": np.tanh, "exp": np.exp,
    "sqrt": np.sqrt, "abs": np.abs,
}


def _domain_error(node: Node, what: str) -> NumericError:
    return NumericError(f"{what} at offset {node.pos}")


def _unary(node: Unary, v):
    if node.op == "neg":
        return -v
    if isinstance(v, DualScalar):
        try:
            return getattr(v, node.op)()
        except (ValueError, ZeroDivisionError) as exc:
            raise _domain_error(node, f"{node.op}: {exc}") from None
    if node.op == "sqrt" and np.any(np.asarray(v) < 0):
        raise _domain_error(node, "sqrt of a negative number")
    return _NUMPY_UNARY[node.op](v)


def _binary(node: Binary, a, b):
    op = node.op
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        if isinstance(b, DualScalar):
            if b.value == 0.0:
                raise _domain_error(node, "division by zero")
        elif np.any(np.asarray(b) == 0):
            raise _domain_error(node, "division by zero")
        return a / b
    k = int(b if not isinstance(b, DualScalar) else b.value)
    if isinstance(a, DualScalar):
        try:
            return a ** k
        except ZeroDivisionError:
            raise _domain_error(node, "negative power of zero") from None
    if k < 0:
        if np.any(np.asarray(a) == 0):
            raise _domain_error(node, "negative power of zero")
        return 1.0 / a ** (-k)
    return a ** k


def compile_expression(node: Node) -> Callable[[Mapping[str, object]], object]:
    """Turn a tree into a closure ``env -> value`` (no tree walk per call)."""
    if isinstance(node, Const):
        value = node.value
        return lambda env: value
    if isinstance(node, Var):
        name = node.name
        return lambda env: env[name]
    if isinstance(node, Unary):
        inner = compile_expression(node.operand)
        return lambda env: _unary(node, inner(env))
    left = compile_expression(node.left)
    if node.op == "pow":
        k = int(node.right.value)
        return lambda env: _binary(node, left(env), k)
    right = compile_expression(node.right)
    return lambda env: _binary(node, left(env), right(env))


def evaluate(node: Node, bindings: Mapping[str, object]):
    return compile_expression(node)(bindings)


def eval_with_gradient(node: Node, bindings: Mapping[str, float],
                       wrt: Sequence[str], compiled=None) -> tuple[float, np.ndarray]:
    """Value and exact gradient with respect to ``wrt``.

    One dual-number pass is made per entry of ``wrt``, seeding that variable's
    derivative with 1.
    """
    fn = compiled or compile_expression(node)
    missing = [v for v in wrt if v not in bindings]
    if missing:
        raise NumericError(f"unbound variables: {', '.join(missing)}")
    if not wrt:
        return float(fn(bindings)), np.zeros(0)
    grad = np.empty(len(wrt))
    value = None
    for j, name in enumerate(wrt):
        env = {k: DualScalar(float(v), 1.0 if k == name else 0.0) for k, v in bindings.items()}
        out = DualScalar.lift(fn(env))
        value = out.value
        grad[j] = out.deriv
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite value or gradient")
    return float(value), grad
