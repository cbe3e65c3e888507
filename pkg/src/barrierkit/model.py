"""Constrained control systems: dynamics, state constraints and control sets.

Vector-valued maps in this module follow one broadcasting convention: a state
argument has shape ``(n,)`` for a single point or ``(n, N)`` for a batch of
``N`` points, and likewise ``(m,)`` / ``(m, N)`` for controls. Jacobians and
gradients are only ever requested at single points.

Constraint and control indices are 0-based in the Python API.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

ArrayMap = Callable[..., np.ndarray]


@dataclass(frozen=True)
class AffineDecomposition:
    """``f(x, u) = drift(x) + input_matrix(x) @ u``."""

    drift: Callable[[np.ndarray], np.ndarray]
    input_matrix: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SystemModel:
    """Dynamics ``x' = f(x, u)`` with its state Jacobian."""

    n: int
    m: int
    dynamics: ArrayMap
    jacobian_x: ArrayMap
    affine: Optional[AffineDecomposition] = None
    name: str = "system"

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise DimensionError(f"dimensions must be positive, got n={self.n}, m={self.m}")

    @property
    def is_affine(self) -> bool:
        return self.affine is not None

    def f(self, x, u) -> np.ndarray:
        return np.asarray(self.dynamics(x, u), dtype=float)

    def jac(self, x, u) -> np.ndarray:
        return np.asarray(self.jacobian_x(x, u), dtype=float).reshape(self.n, self.n)

    def drift(self, x) -> np.ndarray:
        return np.asarray(self.affine.drift(x), dtype=float)

    def input_matrix(self, x) -> np.ndarray:
        return np.asarray(self.affine.input_matrix(x), dtype=float).reshape(self.n, self.m)


@dataclass(frozen=True)
class ConstraintSet:
    """``G = {x : g_i(x) <= 0, i = 0..p-1}`` with a numeric activation band."""

    p: int
    g: ArrayMap
    gradient: Callable[[int, np.ndarray], np.ndarray]
    activation_tol: float = 1e-8
    names: tuple = ()

    def values(self, x) -> np.ndarray:
        return np.asarray(self.g(x), dtype=float)

    def grad(self, i: int, x) -> np.ndarray:
        if not 0 <= i < self.p:
            raise ContractError(f"constraint index {i} out of range 0..{self.p - 1}")
        return np.asarray(self.gradient(i, x), dtype=float).reshape(-1)

    def gradients(self, x) -> np.ndarray:
        return np.stack([self.grad(i, x) for i in range(self.p)])

    def max_g(self, x) -> np.ndarray:
        return np.max(self.values(x), axis=0)


class ControlKind(str, enum.Enum):
    BALL = "ball"
    BOX = "box"


@dataclass(frozen=True)
class ControlSet:
    """Compact control set: the closed unit ball of R^m or an axis-aligned box."""

    kind: ControlKind
    m: int
    lower: Optional[tuple] = None
    upper: Optional[tuple] = None
    sample_count: Optional[int] = None

    @classmethod
    def unit_ball(cls, m: int = 1, sample_count: Optional[int] = None) -> "ControlSet":
        return cls(ControlKind.BALL, m, sample_count=sample_count)

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float],
            sample_count: Optional[int] = None) -> "ControlSet":
        lower = tuple(float(v) for v in lower)
        upper = tuple(float(v) for v in upper)
        if len(lower) != len(upper):
            raise DimensionError("box bounds must have equal length")
        if any(lo > hi for lo, hi in zip(lower, upper)):
            raise ContractError("box lower bound exceeds upper bound")
        return cls(ControlKind.BOX, len(lower), lower, upper, sample_count)

    @property
    def n_samples(self) -> int:
        if self.sample_count is not None:
            return self.sample_count
        return 64 if self.m == 1 else 256

    @property
    def lo(self) -> np.ndarray:
        if self.kind is ControlKind.BALL:
            return -np.ones(self.m)
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        if self.kind is ControlKind.BALL:
            return np.ones(self.m)
        return np.array(self.upper)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def is_interval(self) -> bool:
        """True when the set is a 1-D interval (ball with m=1 or any 1-D box)."""
        return self.m == 1

    def contains(self, u, tol: float = 1e-12) -> bool:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.shape != (self.m,):
            raise DimensionError(f"control must have length {self.m}, got {u.shape}")
        if self.kind is ControlKind.BALL:
            return bool(np.linalg.norm(u) <= 1.0 + tol)
        return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))

    def project(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind is ControlKind.BALL:
            norm = np.linalg.norm(u)
            return u / norm if norm > 1.0 else u
        return np.clip(u, self.lo, self.hi)

    def argmin_linear(self, a, tol: float = 1e-12) -> tuple[np.ndarray, bool]:
        """Minimise ``a . u`` over the set.

        Returns ``(u, degenerate)``. Ties are broken towards the centre: ``u = 0``
        on the ball when ``|a| <= tol``, and the interval midpoint on each box
        coordinate with ``|a_j| <= tol``.
        """
        a = np.asarray(a, dtype=float).reshape(self.m)
        if self.kind is ControlKind.BALL and self.m > 1:
            norm = np.linalg.norm(a)
            if norm <= tol:
                return np.zeros(self.m), True
            return -a / norm, False
        lo, hi = self.lo, self.hi
        u = np.where(a > 0, lo, hi)
        flat = np.abs(a) <= tol
        u = np.where(flat, 0.5 * (lo + hi), u)
        return u, bool(np.any(flat))

    def samples(self) -> np.ndarray:
        """Deterministic samples of the set, shape ``(k, m)``; extremes included."""
        k = self.n_samples
        if self.m == 1:
            return np.linspace(self.lo[0], self.hi[0], max(k, 2)).reshape(-1, 1)
        rng = np.random.default_rng(12345)
        if self.kind is ControlKind.BALL:
            if self.m == 2:
                ang = np.linspace(0.0, 2 * math.pi, k, endpoint=False)
                shell = np.stack([np.cos(ang), np.sin(ang)], axis=1)
            else:
                shell = rng.normal(size=(k, self.m))
                shell /= np.linalg.norm(shell, axis=1, keepdims=True)
            inner = 0.5 * shell[:: max(1, k // 16)]
            return np.vstack([shell, np.eye(self.m), -np.eye(self.m), inner,
                              np.zeros((1, self.m))])
        corners = self.vertices()
        inner = self.lo + (self.hi - self.lo) * rng.random((k, self.m))
        return np.vstack([corners, inner, self.center[None, :]])

    def vertices(self, cap: int = 64) -> np.ndarray:
        """Extreme points used as constant test controls."""
        if self.m == 1:
            return np.array([[self.lo[0]], [self.hi[0]]])
        if self.kind is ControlKind.BALL:
            return np.vstack([np.eye(self.m), -np.eye(self.m)])
        count = min(2 ** self.m, cap)
        bits = ((np.arange(count)[:, None] >> np.arange(self.m)) & 1).astype(bool)
        return np.where(bits, self.hi, self.lo)

    def random_extreme(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` random extreme points, shape ``(size, m)``."""
        if self.kind is ControlKind.BALL and self.m > 1:
            v = rng.normal(size=(size, self.m))
            return v / np.linalg.norm(v, axis=1, keepdims=True)
        bits = rng.random((size, self.m)) < 0.5
        return np.where(bits, self.hi, self.lo)

    def search_values(self, levels: int = 5) -> np.ndarray:
        """A small fixed control alphabet for tree searches, shape ``(k, m)``."""
        if self.m == 1:
            return np.linspace(self.lo[0], self.hi[0], levels).reshape(-1, 1)
        c = self.center
        half = 0.5 * (self.hi - self.lo)
        vals = [c]
        for j in range(self.m):
            for s in (-1.0, -0.5, 0.5, 1.0):
                v = c.copy()
                v[j] += s * half[j]
                vals.append(v)
        return np.array(vals)


class RegionLabel(str, enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"


def _as_vector(v, size: int, what: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (size,):
        arr_flat = arr.reshape(-1) if arr.size == size else None
        if arr_flat is None:
            raise DimensionError(f"{what} must have length {size}, got shape {arr.shape}")
        arr = arr_flat
    return arr


def _check_finite(values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise NumericError(f"{what} component {idx} is not finite ({values.flat[idx]})")


def eval_dynamics(sys: SystemModel, x, u) -> np.ndarray:
    """Evaluate ``f(x, u)`` at a single point with dimension and finiteness checks."""
    x = _as_vector(x, sys.n, "state")
    u = _as_vector(u, sys.m, "control")
    out = sys.f(x, u)
    if out.shape != (sys.n,):
        raise DimensionError(f"dynamics returned shape {out.shape}, expected ({sys.n},)")
    _check_finite(out, "dynamics")
    return out


def classify_region(cs: ConstraintSet, x) -> RegionLabel:
    vals = cs.values(np.asarray(x, dtype=float))
    _check_finite(np.atleast_1d(vals), "constraint")
    top = float(np.max(vals))
    if top <= -cs.activation_tol:
        return RegionLabel.INTERIOR
    if top < cs.activation_tol:
        return RegionLabel.BOUNDARY
    return RegionLabel.OUTSIDE


def active_indices(cs: ConstraintSet, x) -> frozenset:
    """Indices of the constraints active at a boundary point."""
    if classify_region(cs, x) is not RegionLabel.BOUNDARY:
        raise ContractError("active_indices requires a point on the constraint boundary")
    vals = cs.values(np.asarray(x, dtype=float))
    return frozenset(int(i) for i in np.flatnonzero(np.abs(vals) < cs.activation_tol))


def lie_derivative(sys: SystemModel, cs: ConstraintSet, i: int, x, u) -> float:
    """``Dg_i(x) . f(x, u)``."""
    if not 0 <= i < cs.p:
        raise ContractError(f"constraint index {i} out of range 0..{cs.p - 1}")
    val = float(cs.grad(i, x) @ eval_dynamics(sys, x, u))
    if not math.isfinite(val):
        raise NumericError(f"Lie derivative of constraint {i} is not finite")
    return val


def gronwall_bound(C: float, alpha: int, x0_norm: float, dt: float) -> float:
    """Norm bound ``((1 + |x0|^a) e^{a C dt} - 1)^{1/a}`` under linear growth of ``f``."""
    for name, v in (("C", C), ("x0_norm", x0_norm), ("dt", dt)):
        if not math.isfinite(v):
            raise NumericError(f"{name} is not finite")
    if alpha not in (1, 2):
        raise ContractError("alpha must be 1 or 2")
    if C <= 0 or dt < 0:
        raise ContractError("gronwall_bound requires C > 0 and dt >= 0")
    return ((1.0 + x0_norm ** alpha) * math.exp(alpha * C * dt) - 1.0) ** (1.0 / alpha)


def finite_difference_jacobian(fun, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of ``fun`` at ``x``; used for checks, not solves."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)
