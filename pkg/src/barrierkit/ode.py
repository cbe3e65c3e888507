"""Runge-Kutta integration with zero-crossing events.

Backward runs (``t1 < t0``) are integrated in the reversed time ``s = t0 - t``
so that step control and event localisation never need to know the direction.
Stored times are always the original ones, so a backward trajectory has
decreasing ``times``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DivergenceError, NumericError, RangeError
from .model import gronwall_bound

Field = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class IntegratorOptions:
    scheme: str = "rk4"  # "rk4" | "rkf45"
    step: float = 1e-3
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_steps: int = 10_000_000
    event_tol: float = 1e-10
    max_step: Optional[float] = None  # rkf45 only; defaults to span / 16
    # events with |value| <= event_arm_tol at t0 cannot fire during the first step
    event_arm_tol: float = 0.0
    # (C, alpha): warn once when |y| exceeds the Gronwall growth bound
    growth: Optional[tuple] = None

    def __post_init__(self):
        if self.scheme not in ("rk4", "rkf45"):
            raise ContractError(f"unknown scheme {self.scheme!r}")
        if not self.step > 0:
            raise ContractError("step must be positive")
        if not (self.rel_tol > 0 and self.abs_tol > 0 and self.event_tol > 0):
            raise ContractError("tolerances must be positive")
        if self.max_steps < 1:
            raise ContractError("max_steps must be positive")


@dataclass(frozen=True)
class Event:
    """Zero crossing of ``fn(t, y)``.

    ``direction`` > 0 only reports crossings from negative to positive, < 0 the
    reverse, 0 both. Directions refer to the order of integration.
    """

    fn: Callable[[float, np.ndarray], float]
    terminal: bool = False
    direction: int = 0
    name: str = ""


@dataclass(frozen=True)
class EventHit:
    event_id: int
    time: float
    state: np.ndarray
    name: str = ""


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (N, k)
    derivs: np.ndarray  # (N, k), dy/dt at each node
    events: tuple = ()
    terminated: Optional[int] = None  # event id that stopped the run

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def is_backward(self) -> bool:
        return len(self.times) > 1 and self.times[-1] < self.times[0]


# Fehlberg 4(5) tableau
_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
_B5 = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)
_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)


def rk4_step(fun: Field, s: float, y: np.ndarray, h: float, k1=None) -> np.ndarray:
    k1 = fun(s, y) if k1 is None else k1
    k2 = fun(s + 0.5 * h, y + 0.5 * h * k1)
    k3 = fun(s + 0.5 * h, y + 0.5 * h * k2)
    k4 = fun(s + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def rkf45_step(fun: Field, s: float, y: np.ndarray, h: float, k1=None):
    """One Fehlberg step; returns the 5th-order solution and an error estimate."""
    ks = [fun(s, y) if k1 is None else k1]
    for i in range(1, 6):
        yi = y + h * sum(a * k for a, k in zip(_A[i], ks))
        ks.append(fun(s + _C[i] * h, yi))
    y5 = y + h * sum(b * k for b, k in zip(_B5, ks))
    y4 = y + h * sum(b * k for b, k in zip(_B4, ks))
    return y5, y5 - y4


def hermite(s0, y0, d0, s1, y1, d1, s):
    """Cubic Hermite interpolant on ``[s0, s1]`` evaluated at ``s``."""
    h = s1 - s0
    th = (s - s0) / h
    h00 = (1 + 2 * th) * (1 - th) ** 2
    h10 = th * (1 - th) ** 2
    h01 = th * th * (3 - 2 * th)
    h11 = th * th * (th - 1)
    return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1


def _as_event(e: Union[Event, Callable]) -> Event:
    return e if isinstance(e, Event) else Event(e)


def _crossed(prev: float, cur: float, direction: int) -> bool:
    if prev == 0.0 or math.copysign(1.0, prev) == math.copysign(1.0, cur) and cur != 0.0:
        return False
    if direction > 0:
        return prev < 0.0
    if direction < 0:
        return prev > 0.0
    return True


def integrate(field_fn: Field, y0, t0: float, t1: float,
              opts: Optional[IntegratorOptions] = None,
              events: Sequence[Union[Event, Callable]] = ()) -> Trajectory:
    """Integrate ``y' = field_fn(t, y)`` from ``t0`` to ``t1`` (either direction)."""
    opts = opts or IntegratorOptions()
    if t1 == t0:
        raise ContractError("t1 must differ from t0")
    sign = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    evs = [_as_event(e) for e in events]

    def fun(s, y):
        d = np.asarray(field_fn(t0 + sign * s, y), dtype=float)
        return sign * d

    def to_t(s):
        return t0 + sign * s

    y = np.array(y0, dtype=float).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise NumericError("initial state is not finite")
    k = fun(0.0, y)
    s_nodes, y_nodes, d_nodes = [0.0], [y.copy()], [k.copy()]
    hits: list[EventHit] = []
    ev_prev = [float(e.fn(t0, y)) for e in evs]
    armed = [abs(v) > opts.event_arm_tol or opts.event_arm_tol == 0.0 for v in ev_prev]
    growth_warned = False
    y0_norm = float(np.linalg.norm(y))

    def build(terminated=None):
        s_arr = np.array(s_nodes)
        return Trajectory(to_t(s_arr), np.array(y_nodes), sign * np.array(d_nodes),
                          tuple(hits), terminated)

    s = 0.0
    h = opts.step if opts.scheme == "rk4" else min(opts.step, span)
    max_step = opts.max_step or span / 16.0
    steps = 0
    while s < span * (1 - 1e-15) and span - s > 1e-14 * max(1.0, span):
        if steps >= opts.max_steps:
            raise DivergenceError(f"step budget {opts.max_steps} exhausted at t={to_t(s)}",
                                  partial=build())
        h_try = min(h, span - s)
        if opts.scheme == "rk4":
            y_new = rk4_step(fun, s, y, h_try, k)
            h_used = h_try
        else:
            while True:
                y_new, err = rkf45_step(fun, s, y, h_try, k)
                scale = opts.abs_tol + opts.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
                e = float(np.max(np.abs(err) / scale)) if np.all(np.isfinite(err)) else math.inf
                if e <= 1.0:
                    h_used = h_try
                    factor = 5.0 if e == 0 else min(5.0, max(0.2, 0.9 * e ** -0.2))
                    h = min(h_try * factor, max_step)
                    break
                h_try *= max(0.1, 0.9 * e ** -0.25) if math.isfinite(e) else 0.1
                if h_try < 1e-14 * max(1.0, span):
                    raise NumericError(f"step size underflow at t={to_t(s)}")
        steps += 1
        if not np.all(np.isfinite(y_new)):
            raise NumericError(f"non-finite state at t={to_t(s + h_used)}")
        s_new = s + h_used
        if span - s_new < 1e-12 * max(1.0, span):
            s_new = span
        k_new = fun(s_new, y_new)

        # events: collect sign changes over [s, s_new]
        ev_cur = [float(e.fn(to_t(s_new), y_new)) for e in evs]
        found = []
        for j, e in enumerate(evs):
            if armed[j] and _crossed(ev_prev[j], ev_cur[j], e.direction):
                t_hit, y_hit = _localise(e, s, y, k, s_new, y_new, k_new, to_t, opts.event_tol)
                found.append((t_hit, j, y_hit))
        found.sort(key=lambda r: r[0])
        stop = None
        for s_hit, j, y_hit in found:
            hits.append(EventHit(j, to_t(s_hit), y_hit, evs[j].name))
            if evs[j].terminal:
                stop = (s_hit, j, y_hit)
                break
        if stop is not None:
            s_hit, j, y_hit = stop
            if s_hit > s_nodes[-1]:
                s_nodes.append(s_hit)
                y_nodes.append(y_hit)
                d_nodes.append(fun(s_hit, y_hit))
            return build(terminated=j)

        ev_prev = ev_cur
        armed = [True] * len(evs)
        s, y, k = s_new, y_new, k_new
        s_nodes.append(s)
        y_nodes.append(y)
        d_nodes.append(k)
        if opts.growth is not None and not growth_warned:
            C, alpha = opts.growth
            if np.linalg.norm(y) > gronwall_bound(C, alpha, y0_norm, s):
                warnings.warn(f"state norm exceeds the Gronwall bound at t={to_t(s)}",
                              RuntimeWarning, stacklevel=2)
                growth_warned = True
    return build()


def _localise(ev: Event, sa, ya, da, sb, yb, db, to_t, tol):
    """Bisect the crossing of ``ev`` on the Hermite interpolant of one step.

    Returns the bracket end on the pre-crossing side, so the reported state has
    not yet passed the surface.
    """
    va = float(ev.fn(to_t(sa), ya))
    lo, hi = sa, sb
    y_lo = ya
    if va == 0.0:
        return sa, ya
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ym = hermite(sa, ya, da, sb, yb, db, mid)
        vm = float(ev.fn(to_t(mid), ym))
        if vm == 0.0:
            return mid, ym
        if (vm > 0) == (va > 0):
            lo, y_lo = mid, ym
        else:
            hi = mid
    return lo, y_lo


def dense_eval(traj: Trajectory, t: float) -> np.ndarray:
    """Cubic Hermite interpolation of a trajectory at time ``t``."""
    times = traj.times
    backward = traj.is_backward
    lo_t, hi_t = (times[-1], times[0]) if backward else (times[0], times[-1])
    if not lo_t - 1e-14 <= t <= hi_t + 1e-14:
        raise RangeError(f"t={t} outside trajectory span [{lo_t}, {hi_t}]")
    if len(times) == 1:
        return traj.states[0].copy()
    key = -times if backward else times
    tk = -t if backward else t
    i = int(np.searchsorted(key, tk, side="right")) - 1
    i = min(max(i, 0), len(times) - 2)
    if key[i] == tk:
        return traj.states[i].copy()
    return hermite(times[i], traj.states[i], traj.derivs[i],
                   times[i + 1], traj.states[i + 1], traj.derivs[i + 1], t)
