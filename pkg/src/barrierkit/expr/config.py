"""System definitions from TOML or JSON documents.

Schema::

    [system]       name = "...", n = 2, m = 1, p = 2 (optional)
    [dynamics]     f = ["x2", "-x1 + u1"]
    [constraints]  g = ["x1 - 1"], activation_tol = 1e-8 (optional)
    [control]      kind = "ball"  |  kind = "box", lower = [...], upper = [...]
    [parameters]   k = 2.0, ...

State symbols are ``x1..xn`` and control symbols ``u1..um``. Constraints may
only reference state symbols and parameters.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import ConfigError, DimensionError, NumericError, ParseError
from ..model import AffineDecomposition, ConstraintSet, ControlSet, SystemModel
from .ast import uses_op
from .dual import DualScalar
from .evaluate import compile_expression
from .parser import parse_expression

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

AFFINE_SAMPLES = 20
AFFINE_TOL = 1e-10


@dataclass(frozen=True)
class SystemConfig:
    name: str
    n: int
    m: int
    p: int
    dynamics_exprs: tuple
    constraint_exprs: tuple
    control: dict
    parameters: dict = field(default_factory=dict)
    activation_tol: float = 1e-8


def _require(table: dict, key: str, path: str, kind=None):
    if not isinstance(table, dict):
        raise ConfigError("expected a table", path)
    if key not in table:
        raise ConfigError("missing key", f"{path}.{key}" if path else key)
    value = table[key]
    if kind is not None and (not isinstance(value, kind) or isinstance(value, bool)):
        raise ConfigError(f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}",
                          f"{path}.{key}")
    return value


def _string_list(table: dict, key: str, path: str, length: int) -> tuple:
    items = _require(table, key, path, list)
    if len(items) != length:
        raise ConfigError(f"expected {length} expressions, got {len(items)}", f"{path}.{key}")
    for j, s in enumerate(items):
        if not isinstance(s, str):
            raise ConfigError("expected an expression string", f"{path}.{key}[{j}]")
    return tuple(items)


def parse_system_config(doc: dict) -> SystemConfig:
    """Validate a decoded document (schema only, expressions are not parsed yet)."""
    if not isinstance(doc, dict):
        raise ConfigError("document must be a table")
    system = _require(doc, "system", "", dict)
    name = str(system.get("name", "system"))
    n = _require(system, "n", "system", int)
    m = _require(system, "m", "system", int)
    if n < 1:
        raise ConfigError("must be positive", "system.n")
    if m < 1:
        raise ConfigError("must be positive", "system.m")
    dyn = _string_list(_require(doc, "dynamics", "", dict), "f", "dynamics", n)
    cons_table = _require(doc, "constraints", "", dict)
    g = _require(cons_table, "g", "constraints", list)
    p = system.get("p", len(g))
    if not isinstance(p, int) or isinstance(p, bool) or p < 1:
        raise ConfigError("must be a positive integer", "system.p")
    cons = _string_list(cons_table, "g", "constraints", p)
    tol = cons_table.get("activation_tol", 1e-8)
    if not isinstance(tol, (int, float)) or tol <= 0:
        raise ConfigError("must be a positive number", "constraints.activation_tol")

    control = doc.get("control", {"kind": "ball"})
    kind = _require(control, "kind", "control", str)
    if kind == "box":
        for key in ("lower", "upper"):
            bounds = _require(control, key, "control", list)
            if len(bounds) != m:
                raise ConfigError(f"expected {m} bounds, got {len(bounds)}", f"control.{key}")
            if not all(isinstance(b, (int, float)) and not isinstance(b, bool) for b in bounds):
                raise ConfigError("bounds must be numbers", f"control.{key}")
        if any(lo > hi for lo, hi in zip(control["lower"], control["upper"])):
            raise ConfigError("lower bound exceeds upper bound", "control")
    elif kind != "ball":
        raise ConfigError(f"unknown control kind {kind!r}; expected 'ball' or 'box'", "control.kind")

    params = doc.get("parameters", {})
    if not isinstance(params, dict):
        raise ConfigError("expected a table", "parameters")
    for key, v in params.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError("parameter values must be numbers", f"parameters.{key}")
    return SystemConfig(name, n, m, p, dyn, cons, dict(control),
                        {k: float(v) for k, v in params.items()}, float(tol))


def _parse_all(exprs, symbols, path) -> list:
    trees = []
    for j, text in enumerate(exprs):
        try:
            tree = parse_expression(text, symbols)
        except ParseError as exc:
            raise ParseError(f"{path}[{j}]: {exc.args[0].rsplit(' (at offset', 1)[0]}",
                             exc.offset, text) from None
        if uses_op(tree, "abs"):
            raise ConfigError("abs is not smooth and is not allowed here", f"{path}[{j}]")
        trees.append(tree)
    return trees


class _Compiled:
    """Compiled expression list with numeric and dual-number evaluation."""

    def __init__(self, trees: list, names: list, params: dict):
        self.fns = [compile_expression(t) for t in trees]
        self.names = names
        self.params = params

    def env(self, values) -> dict:
        env = dict(self.params)
        for name, v in zip(self.names, values):
            env[name] = v
        return env

    def numeric(self, values) -> np.ndarray:
        env = self.env(values)
        outs = [np.asarray(fn(env), dtype=float) for fn in self.fns]
        return np.stack(np.broadcast_arrays(*outs))

    def seeded(self, values, seed: int) -> list:
        env = self.env([DualScalar(float(v), 1.0 if j == seed else 0.0)
                        for j, v in enumerate(values)])
        return [DualScalar.lift(fn(env)) for fn in self.fns]

    def seeded_one(self, i: int, values, seed: int) -> DualScalar:
        env = self.env([DualScalar(float(v), 1.0 if j == seed else 0.0)
                        for j, v in enumerate(values)])
        return DualScalar.lift(self.fns[i](env))

    def jacobian(self, values, cols) -> np.ndarray:
        out = np.empty((len(self.fns), len(cols)))
        for c, j in enumerate(cols):
            out[:, c] = [d.deriv for d in self.seeded(values, j)]
        return out


def _split_xu(x, u, n: int, m: int) -> list:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[0] != n or u.shape[0] != m:
        raise DimensionError(f"expected state length {n} and control length {m}")
    return list(x) + list(u)


def _detect_affine(dyn: _Compiled, n: int, m: int, rng: np.random.Generator) -> bool:
    """True when each ``df/du_k`` is independent of ``u`` at random states."""
    checked = 0
    attempts = 0
    while checked < AFFINE_SAMPLES and attempts < 10 * AFFINE_SAMPLES:
        attempts += 1
        x = rng.uniform(-2.0, 2.0, n)
        ua, ub = rng.uniform(-1.0, 1.0, (2, m))
        try:
            ja = dyn.jacobian(np.concatenate([x, ua]), range(n, n + m))
            jb = dyn.jacobian(np.concatenate([x, ub]), range(n, n + m))
        except (NumericError, ZeroDivisionError, ValueError, OverflowError):
            continue
        if not (np.all(np.isfinite(ja)) and np.all(np.isfinite(jb))):
            continue
        if np.max(np.abs(ja - jb)) > AFFINE_TOL * (1.0 + np.max(np.abs(ja))):
            return False
        checked += 1
    return checked > 0


def build_system(cfg: SystemConfig) -> tuple:
    """Compile a validated config into ``(SystemModel, ConstraintSet, ControlSet)``."""
    n, m = cfg.n, cfg.m
    xs = [f"x{i + 1}" for i in range(n)]
    us = [f"u{k + 1}" for k in range(m)]
    clash = set(cfg.parameters) & set(xs + us)
    if clash:
        raise ConfigError(f"parameter names clash with state/control symbols: {sorted(clash)}",
                          "parameters")
    dyn_trees = _parse_all(cfg.dynamics_exprs, set(xs + us) | set(cfg.parameters), "dynamics.f")
    con_trees = _parse_all(cfg.constraint_exprs, set(xs) | set(cfg.parameters), "constraints.g")
    dyn = _Compiled(dyn_trees, xs + us, cfg.parameters)
    con = _Compiled(con_trees, xs, cfg.parameters)

    def dynamics(x, u):
        return dyn.numeric(_split_xu(x, u, n, m))

    def jacobian_x(x, u):
        return dyn.jacobian(_split_xu(x, u, n, m), range(n))

    def g(x):
        return con.numeric(list(np.asarray(x, dtype=float)))

    def gradient(i, x):
        vals = list(np.asarray(x, dtype=float).reshape(-1))
        return np.array([con.seeded_one(i, vals, c).deriv for c in range(n)])

    affine = None
    if _detect_affine(dyn, n, m, np.random.default_rng(0)):
        zero_u = np.zeros(m)

        def drift(x):
            x = np.asarray(x, dtype=float)
            if x.ndim == 2:
                return dynamics(x, np.zeros((m, x.shape[1])))
            return dynamics(x, zero_u)

        def input_matrix(x):
            return dyn.jacobian(list(np.asarray(x, dtype=float)) + list(zero_u), range(n, n + m))

        affine = AffineDecomposition(drift, input_matrix)

    sysm = SystemModel(n, m, dynamics, jacobian_x, affine, cfg.name)
    cs = ConstraintSet(cfg.p, g, gradient, cfg.activation_tol,
                       tuple(cfg.constraint_exprs))
    if cfg.control["kind"] == "box":
        ctrl = ControlSet.box(cfg.control["lower"], cfg.control["upper"])
    else:
        ctrl = ControlSet.unit_ball(m)
    return sysm, cs, ctrl


def decode_config_text(text: str) -> dict:
    """Decode TOML, or JSON when the text starts with ``{``."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None


def _looks_like_path(text: str) -> bool:
    if "\n" in text or "=" in text or text.lstrip().startswith("{"):
        return False
    try:
        return Path(text).is_file() or text.endswith((".toml", ".json"))
    except OSError:
        return False


def load_system_config(source: Union[str, Path, dict]) -> tuple:
    """Load ``(SystemModel, ConstraintSet, ControlSet)`` from a path, text or dict."""
    if isinstance(source, dict):
        doc = source
    elif isinstance(source, Path) or _looks_like_path(str(source)):
        try:
            doc = decode_config_text(Path(source).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    else:
        doc = decode_config_text(str(source))
    return build_system(parse_system_config(doc))
