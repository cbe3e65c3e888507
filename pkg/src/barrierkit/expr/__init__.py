"""System-definition language: parsing, evaluation and config loading."""

from .ast import Binary, Const, Node, Unary, Var, free_symbols, render
from .config import (SystemConfig, build_system, decode_config_text, load_system_config,
                     parse_system_config)
from .dual import DualScalar
from .evaluate import compile_expression, eval_with_gradient, evaluate
from .parser import parse_expression, tokenize

__all__ = [
    "Binary", "Const", "Node", "Unary", "Var", "free_symbols", "render",
    "SystemConfig", "build_system", "decode_config_text", "load_system_config",
    "parse_system_config", "DualScalar", "compile_expression", "eval_with_gradient",
    "evaluate", "parse_expression", "tokenize",
]
