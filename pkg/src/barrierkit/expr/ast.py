"""Expression tree for the system-definition language."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Union

UNARY_OPS = ("neg", "sin", "cos", "tanh", "exp", "sqrt", "abs")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")
FUNCTIONS = ("sin", "cos", "tanh", "exp", "sqrt", "abs")

_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


@dataclass(frozen=True)
class Const:
    value: float
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"
    pos: int = field(default=0, compare=False, repr=False)


Node = Union[Const, Var, Unary, Binary]


def walk(node: Node) -> Iterator[Node]:
    yield node
    if isinstance(node, Unary):
        yield from walk(node.operand)
    elif isinstance(node, Binary):
        yield from walk(node.left)
        yield from walk(node.right)


def free_symbols(node: Node) -> set:
    return {n.name for n in walk(node) if isinstance(n, Var)}


def uses_op(node: Node, op: str) -> bool:
    return any(getattr(n, "op", None) == op for n in walk(node))


def _const_text(value) -> str:
    if isinstance(value, int):
        return str(value)
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value)) + ".0"
    return repr(float(value))


def render(node: Node) -> str:
    """Text that parses back to an identical tree (positions aside)."""
    if isinstance(node, Const):
        text = _const_text(node.value)
        return f"({text})" if text.startswith("-") else text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-{render(node.operand)})"
        return f"{node.op}({render(node.operand)})"
    if node.op == "pow":
        exp = node.right.value
        return f"({render(node.left)}^{int(exp)})"
    return f"({render(node.left)} {_SYMBOL[node.op]} {render(node.right)})"
