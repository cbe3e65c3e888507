"""Built-in example systems with hand-written derivatives.

Each fixture also carries an equivalent config document so that the DSL path
can be cross-checked against the closures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .model import AffineDecomposition, ConstraintSet, ControlSet, SystemModel


@dataclass(frozen=True)
class Fixture:
    name: str
    system: SystemModel
    constraints: ConstraintSet
    control: ControlSet
    search_box: tuple  # ((lo, hi), ...) for tangency scans
    grid_box: tuple  # default classification window
    config_text: str
    params: dict = field(default_factory=dict)
    membership: Optional[Callable] = None  # exact admissible-set membership, if known


def _spring(name: str, mass: float, k: float, b: float, x1_max: float, cubic: float) -> Fixture:
    km, bm = k / mass, b / mass

    def dynamics(x, u):
        x1, x2 = x[0], x[1]
        return np.stack(np.broadcast_arrays(x2, -km * (x1 + cubic * x1 ** 3) - bm * x2 + u[0] / mass))

    def jacobian_x(x, u):
        return np.array([[0.0, 1.0], [-km * (1.0 + 3.0 * cubic * x[0] ** 2), -bm]])

    def drift(x):
        x1, x2 = x[0], x[1]
        return np.stack(np.broadcast_arrays(x2, -km * (x1 + cubic * x1 ** 3) - bm * x2))

    def input_matrix(x):
        return np.array([[0.0], [1.0 / mass]])

    sys = SystemModel(2, 1, dynamics, jacobian_x, AffineDecomposition(drift, input_matrix), name)
    cs = ConstraintSet(1, lambda x: np.stack([np.asarray(x[0]) - x1_max]),
                       lambda i, x: np.array([1.0, 0.0]), names=("x1 - x1max",))
    spring_force = "(x1 + x1^3)" if cubic == 1.0 else (
        "x1" if cubic == 0.0 else "(x1 + cubic*x1^3)")
    params = {"mass": mass, "k": k, "b": b, "x1max": x1_max}
    if cubic not in (0.0, 1.0):
        params["cubic"] = cubic
    text = _toml(name, [ "x2", f"-(k/mass)*{spring_force} - (b/mass)*x2 + u1/mass"],
                 ["x1 - x1max"], params)
    return Fixture(name, sys, cs, ControlSet.unit_ball(1),
                   ((x1_max - 3.0, x1_max + 1.0), (-4.0, 4.0)),
                   ((x1_max - 4.0, x1_max), (-4.0, 4.0)), text, params)


def _toml(name, f, g, params) -> str:
    def arr(items):
        return "[" + ", ".join(f'"{s}"' for s in items) + "]"
    lines = ["[system]", f'name = "{name}"', f"n = {len(f)}", "m = 1", "",
             "[dynamics]", f"f = {arr(f)}", "", "[constraints]", f"g = {arr(g)}", "",
             "[control]", 'kind = "ball"', "", "[parameters]"]
    lines += [f"{k} = {float(v)!r}" for k, v in params.items()]
    return "\n".join(lines) + "\n"


def linear_spring(mass=1.0, k=2.0, b=2.0, x1_max=1.0) -> Fixture:
    return _spring("linear_spring", mass, k, b, x1_max, 0.0)


def nonlinear_spring(mass=1.0, k=2.0, b=2.0, x1_max=1.0) -> Fixture:
    return _spring("nonlinear_spring", mass, k, b, x1_max, 1.0)


def nonlinear_spring_soft(mass=1.0, k=2.0, b=2.0, x1_max=1.0) -> Fixture:
    return _spring("nonlinear_spring_soft", mass, k, b, x1_max, 1.0 / 200.0)


# academic example: x1' = 1 - x2^2, x2' = u, a_lo <= x1 <= a_hi

def _cubic_plus(x2):
    """(1/3)(1 + x2)^2 (2 - x2): x1-travel while x2 moves between -1 and x2."""
    return (1.0 + x2) ** 2 * (2.0 - x2) / 3.0


def _cubic_minus(x2):
    """(1/3)(1 - x2)^2 (2 + x2)."""
    return (1.0 - x2) ** 2 * (2.0 + x2) / 3.0


def academic_left(x2, a_lo):
    """Lower x1-bound of the admissible set as a function of x2."""
    x2 = np.asarray(x2, dtype=float)
    return np.where(x2 <= -1.0, a_lo + _cubic_plus(x2),
                    np.where(x2 >= 1.0, a_lo + _cubic_minus(x2), a_lo))


def academic_right(x2, a_hi):
    """Upper x1-bound of the admissible set as a function of x2."""
    x2 = np.asarray(x2, dtype=float)
    return np.where(np.abs(x2) >= 1.0, a_hi,
                    np.where(x2 <= 0.0, a_hi - _cubic_plus(x2), a_hi - _cubic_minus(x2)))


def academic_branches(a_lo: float, a_hi: float) -> dict:
    """Closed-form barrier branches keyed by their tangency point.

    Values are ``(x1(x2), (x2_min, x2_max))`` over the range where the branch is
    an arc of the boundary ending at that point.
    """
    return {
        (a_lo, 1.0): (lambda x2: a_lo + _cubic_minus(x2), (1.0, np.inf)),
        (a_lo, -1.0): (lambda x2: a_lo + _cubic_plus(x2), (-np.inf, -1.0)),
        (a_hi, -1.0): (lambda x2: a_hi - _cubic_plus(x2), (-1.0, 1.0)),
        (a_hi, 1.0): (lambda x2: a_hi - _cubic_minus(x2), (-1.0, 1.0)),
    }


class AcademicRegion:
    """Exact admissible set of the academic example and distances to its boundary."""

    def __init__(self, a_lo: float, a_hi: float, x2_span: float = 6.0, step: float = 2e-4):
        self.a_lo, self.a_hi = a_lo, a_hi
        x2 = np.arange(-x2_span, x2_span + step, step)
        left, right = academic_left(x2, a_lo), academic_right(x2, a_hi)
        keep = left <= right
        pts = np.vstack([np.stack([left[keep], x2[keep]], 1), np.stack([right[keep], x2[keep]], 1)])
        # horizontal closures where the slab pinches shut
        edges = np.flatnonzero(np.diff(keep.astype(int)) != 0)
        for e in edges:
            j = e + 1 if keep[e + 1] else e
            xs = np.linspace(left[j], right[j], 50)
            pts = np.vstack([pts, np.stack([xs, np.full_like(xs, x2[j])], 1)])
        self._tree = cKDTree(pts)

    def contains(self, x1, x2) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        return (academic_left(x2, self.a_lo) <= x1) & (x1 <= academic_right(x2, self.a_hi))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.contains(x[0], x[1])

    def margin(self, x) -> np.ndarray:
        """Horizontal slack ``min(x1 - L(x2), R(x2) - x1)`` for ``x`` of shape ``(2, N)``."""
        x = np.asarray(x, dtype=float)
        return np.minimum(x[0] - academic_left(x[1], self.a_lo),
                          academic_right(x[1], self.a_hi) - x[0])

    def distance(self, points) -> np.ndarray:
        """Euclidean distance of ``points`` (shape ``(N, 2)``) to the boundary."""
        d, _ = self._tree.query(np.asarray(points, dtype=float).reshape(-1, 2))
        return d

    def depth(self, points) -> np.ndarray:
        """Signed distance: positive inside, negative outside."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        d = self.distance(pts)
        return np.where(self.contains(pts[:, 0], pts[:, 1]), d, -d)


def _academic(name: str, a_lo: float, a_hi: float) -> Fixture:
    def dynamics(x, u):
        return np.stack(np.broadcast_arrays(1.0 - x[1] ** 2, u[0]))

    def jacobian_x(x, u):
        return np.array([[0.0, -2.0 * x[1]], [0.0, 0.0]])

    def drift(x):
        return np.stack(np.broadcast_arrays(1.0 - x[1] ** 2, 0.0 * x[1]))

    def input_matrix(x):
        return np.array([[0.0], [1.0]])

    grads = (np.array([-1.0, 0.0]), np.array([1.0, 0.0]))
    sys = SystemModel(2, 1, dynamics, jacobian_x, AffineDecomposition(drift, input_matrix), name)
    cs = ConstraintSet(2, lambda x: np.stack([a_lo - np.asarray(x[0]), np.asarray(x[0]) - a_hi]),
                       lambda i, x: grads[i].copy(), names=("a_lo - x1", "x1 - a_hi"))
    params = {"a_lo": a_lo, "a_hi": a_hi}
    text = _toml(name, ["1 - x2^2", "u1"], ["a_lo - x1", "x1 - a_hi"], params)
    return Fixture(name, sys, cs, ControlSet.unit_ball(1),
                   ((a_lo - 1.0, a_hi + 1.0), (-4.0, 4.0)),
                   ((a_lo, a_hi), (-3.0, 3.0)), text, params, AcademicRegion(a_lo, a_hi))


def academic(a_lo=-1.0, a_hi=3.0) -> Fixture:
    return _academic("academic", a_lo, a_hi)


def academic_disconnected(a_hi=3.0, gap=0.5) -> Fixture:
    return _academic("academic_disconnected", a_hi - gap, a_hi)


FIXTURES = {
    "linear_spring": linear_spring,
    "nonlinear_spring": nonlinear_spring,
    "nonlinear_spring_soft": nonlinear_spring_soft,
    "academic": academic,
    "academic_disconnected": academic_disconnected,
}


def get_fixture(name: str, **overrides) -> Fixture:
    try:
        factory = FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}") from None
    return factory(**overrides)
