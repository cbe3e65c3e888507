"""Hamiltonian minimisation, usable part of the boundary and tangency search."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog, minimize

from .errors import ContractError, NumericError, SingularFaceError
from .model import (ConstraintSet, ControlKind, ControlSet, RegionLabel, SystemModel,
                    active_indices, classify_region, eval_dynamics)

EPS_USE = 1e-9
FLAT_TOL = 1e-12
GOLDEN_ITERS = 20


@dataclass(frozen=True)
class HamiltonianMin:
    u_star: np.ndarray
    value: float
    degenerate: bool = False


@dataclass(frozen=True)
class TangencyPoint:
    z: np.ndarray
    active: frozenset
    i_star: int
    u_star: np.ndarray
    residual: float
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {
            "z": [float(v) for v in self.z],
            "active": sorted(int(i) for i in self.active),
            "i_star": int(self.i_star),
            "face": int(self.i_star) + 1,
            "u_star": [float(v) for v in self.u_star],
            "residual": float(self.residual),
            "degenerate": bool(self.degenerate),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TangencyPoint":
        return cls(np.array(d["z"], dtype=float), frozenset(d["active"]), int(d["i_star"]),
                   np.array(d["u_star"], dtype=float), float(d["residual"]),
                   bool(d.get("degenerate", False)))


def hamiltonian(sys: SystemModel, x, lam, u) -> float:
    lam = np.asarray(lam, dtype=float).reshape(sys.n)
    val = float(lam @ eval_dynamics(sys, x, u))
    if not math.isfinite(val):
        raise NumericError("Hamiltonian is not finite")
    return val


def _f_batch(sys: SystemModel, x, U: np.ndarray) -> np.ndarray:
    """``f(x, U_k)`` for every row of ``U``; returns ``(n, K)``."""
    x = np.asarray(x, dtype=float).reshape(sys.n)
    K = U.shape[0]
    out = sys.f(np.repeat(x[:, None], K, axis=1), U.T)
    return np.asarray(out, dtype=float).reshape(sys.n, K)


def _golden(fun, a: float, b: float, iters: int = GOLDEN_ITERS) -> float:
    r = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - r * (b - a), a + r * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - r * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + r * (b - a)
            fd = fun(d)
    return c if fc <= fd else d


def _pattern_search(fun, ctrl: ControlSet, u0: np.ndarray, iters: int = GOLDEN_ITERS):
    """Coordinate pattern search with projection onto the control set."""
    u, fu = u0.copy(), fun(u0)
    step = 0.25 * float(np.max(ctrl.hi - ctrl.lo))
    for _ in range(iters):
        improved = False
        for j in range(ctrl.m):
            for sgn in (1.0, -1.0):
                v = u.copy()
                v[j] += sgn * step
                v = ctrl.project(v)
                fv = fun(v)
                if fv < fu:
                    u, fu, improved = v, fv, True
        if not improved:
            step *= 0.5
    return u, fu


def _sampled_min(values: np.ndarray, U: np.ndarray):
    best = int(np.argmin(values))
    vmin = values[best]
    close = U[values <= vmin + 1e-9]
    spread = float(np.max(np.linalg.norm(close - U[best], axis=1))) if len(close) > 1 else 0.0
    return best, spread > 1e-3


def minimize_hamiltonian(sys: SystemModel, ctrl: ControlSet, x, lam) -> HamiltonianMin:
    """Minimise ``lam . f(x, u)`` over the control set."""
    lam = np.asarray(lam, dtype=float).reshape(sys.n)
    if not np.all(np.isfinite(lam)):
        raise NumericError("costate is not finite")
    x = np.asarray(x, dtype=float).reshape(sys.n)
    if sys.is_affine:
        a = sys.input_matrix(x).T @ lam
        u, degenerate = ctrl.argmin_linear(a, FLAT_TOL)
        return HamiltonianMin(u, hamiltonian(sys, x, lam, u), degenerate)

    U = ctrl.samples()
    values = lam @ _f_batch(sys, x, U)
    best, degenerate = _sampled_min(values, U)

    def H(u):
        return float(lam @ sys.f(x, np.asarray(u, dtype=float).reshape(sys.m)))

    if ctrl.m == 1:
        width = (ctrl.hi[0] - ctrl.lo[0]) / max(len(U) - 1, 1)
        a = max(ctrl.lo[0], U[best, 0] - width)
        b = min(ctrl.hi[0], U[best, 0] + width)
        u = np.array([_golden(lambda v: H([v]), a, b)])
        if H(u) > values[best]:
            u = U[best].copy()
    else:
        u, _ = _pattern_search(H, ctrl, U[best])
    return HamiltonianMin(u, hamiltonian(sys, x, lam, u), degenerate)


def _lie_affine_terms(sys: SystemModel, cs: ConstraintSet, z, active: Sequence[int]):
    """``L_f g_i(z, u) = c_i + a_i . u`` for an affine system."""
    grads = np.stack([cs.grad(i, z) for i in active])
    c = grads @ sys.drift(z)
    a = grads @ sys.input_matrix(z)
    return c, a


def _max_lie(sys, cs, z, active, U) -> np.ndarray:
    grads = np.stack([cs.grad(i, z) for i in active])
    return np.max(grads @ _f_batch(sys, z, U), axis=0)


def min_max_lie(sys: SystemModel, cs: ConstraintSet, ctrl: ControlSet, z,
                active: Sequence[int]):
    """``min_u max_{i in active} L_f g_i(z, u)``.

    Returns ``(value, u_star, i_star, degenerate)`` where ``i_star`` is the
    active index attaining the max at ``u_star``.
    """
    z = np.asarray(z, dtype=float).reshape(sys.n)
    active = sorted(int(i) for i in active)
    if not active:
        raise ContractError("at least one active constraint is required")
    if len(active) == 1:
        i = active[0]
        hm = minimize_hamiltonian(sys, ctrl, z, cs.grad(i, z))
        return hm.value, hm.u_star, i, hm.degenerate

    if sys.is_affine:
        c, a = _lie_affine_terms(sys, cs, z, active)
        u, degenerate = _min_max_affine(c, a, ctrl)
    else:
        U = ctrl.samples()
        vals = _max_lie(sys, cs, z, active, U)
        best, degenerate = _sampled_min(vals, U)

        def fmax(v):
            return float(_max_lie(sys, cs, z, active, np.asarray(v, dtype=float).reshape(1, -1))[0])

        if ctrl.m == 1:
            width = (ctrl.hi[0] - ctrl.lo[0]) / max(len(U) - 1, 1)
            lo = max(ctrl.lo[0], U[best, 0] - width)
            hi = min(ctrl.hi[0], U[best, 0] + width)
            u = np.array([_golden(lambda v: fmax([v]), lo, hi)])
            if fmax(u) > vals[best]:
                u = U[best].copy()
        else:
            u, _ = _pattern_search(fmax, ctrl, U[best])
    grads = np.stack([cs.grad(i, z) for i in active])
    lies = grads @ eval_dynamics(sys, z, u)
    k = int(np.argmax(lies))
    return float(lies[k]), u, active[k], degenerate


def _min_max_affine(c: np.ndarray, a: np.ndarray, ctrl: ControlSet):
    """Minimise the convex piecewise-affine ``max_i c_i + a_i . u`` over the set."""
    if ctrl.m == 1:
        lo, hi = float(ctrl.lo[0]), float(ctrl.hi[0])
        cands = {lo, hi}
        a1 = a[:, 0]
        for i, j in itertools.combinations(range(len(c)), 2):
            if abs(a1[i] - a1[j]) > FLAT_TOL:
                u = (c[j] - c[i]) / (a1[i] - a1[j])
                if lo <= u <= hi:
                    cands.add(float(u))
        cands = np.array(sorted(cands))
        vals = np.max(c[:, None] + a1[:, None] * cands[None, :], axis=0)
        vmin = float(np.min(vals))
        flat = cands[vals <= vmin + FLAT_TOL]
        if len(flat) > 1 and flat[-1] - flat[0] > 1e-12:
            # the minimum is attained on an interval; take its midpoint
            return np.array([0.5 * (flat[0] + flat[-1])]), True
        return np.array([flat[0]]), False

    k = len(c)
    m = ctrl.m
    if ctrl.kind is ControlKind.BOX:
        res = linprog(np.r_[np.zeros(m), 1.0],
                      A_ub=np.hstack([a, -np.ones((k, 1))]), b_ub=-c,
                      bounds=[(lo, hi) for lo, hi in zip(ctrl.lo, ctrl.hi)] + [(None, None)],
                      method="highs")
        u = np.clip(res.x[:m], ctrl.lo, ctrl.hi)
    else:
        U = ctrl.samples()
        vals = np.max(c[:, None] + a @ U.T, axis=0)
        u0 = U[int(np.argmin(vals))]
        cons = [{"type": "ineq", "fun": lambda w: 1.0 - w[:m] @ w[:m]},
                {"type": "ineq", "fun": lambda w: w[m] - (c + a @ w[:m])}]
        res = minimize(lambda w: w[m], np.r_[u0, np.max(c + a @ u0)], method="SLSQP",
                       constraints=cons, options={"ftol": 1e-14, "maxiter": 200})
        u = ctrl.project(res.x[:m]) if res.success else u0
        if np.max(c + a @ u) > np.max(c + a @ u0):
            u = u0
    return u, False


def usable_part(sys: SystemModel, cs: ConstraintSet, ctrl: ControlSet, z,
                eps_use: float = EPS_USE) -> bool:
    """True when some control keeps ``z`` from being pushed out through its active faces."""
    if classify_region(cs, z) is not RegionLabel.BOUNDARY:
        raise ContractError("usable_part requires a point on the constraint boundary")
    value, _, _, _ = min_max_lie(sys, cs, ctrl, z, active_indices(cs, z))
    return value <= eps_use


@dataclass(frozen=True)
class FaceSearchOptions:
    lower: tuple
    upper: tuple
    resolution: int = 200
    newton_tol: float = 1e-12
    newton_iters: int = 50
    bisect_tol: float = 1e-10
    accept_tol: float = 1e-6
    dedup_tol: float = 1e-6

    @classmethod
    def from_box(cls, box, **kw) -> "FaceSearchOptions":
        box = np.asarray(box, dtype=float)
        return cls(tuple(box[:, 0]), tuple(box[:, 1]), **kw)


def project_to_face(cs: ConstraintSet, face: int, x, tol: float = 1e-12,
                    iters: int = 50) -> np.ndarray:
    """Newton iteration on ``g_face`` along its gradient."""
    x = np.array(x, dtype=float)
    for _ in range(iters):
        g = float(cs.values(x)[face])
        if abs(g) <= tol:
            return x
        d = cs.grad(face, x)
        nd = float(d @ d)
        if nd < 1e-24:
            raise SingularFaceError(f"gradient of constraint {face} vanishes at {x.tolist()}",
                                    point=x.copy())
        x = x - g * d / nd
    if abs(float(cs.values(x)[face])) > 1e3 * tol:
        raise SingularFaceError(f"projection onto constraint {face} did not converge",
                                point=x.copy())
    return x


class _FaceEval:
    """phi along the face, with seeds parameterised by the free coordinates."""

    def __init__(self, sys, cs, ctrl, face, opts: FaceSearchOptions, elim: int, base: np.ndarray):
        self.sys, self.cs, self.ctrl, self.face, self.opts = sys, cs, ctrl, face, opts
        self.elim = elim
        self.base = base

    def point(self, seed: np.ndarray) -> np.ndarray:
        return project_to_face(self.cs, self.face, seed, self.opts.newton_tol,
                               self.opts.newton_iters)

    def active(self, z) -> Optional[list]:
        g = self.cs.values(z)
        tol = self.cs.activation_tol
        if np.any(np.delete(g, self.face) >= tol):
            return None
        act = {self.face} | {int(j) for j in np.flatnonzero(np.abs(g) < tol)}
        return sorted(act)

    def phi(self, seed: np.ndarray):
        z = self.point(seed)
        act = self.active(z)
        if act is None:
            return z, None, None
        value, _, _, _ = min_max_lie(self.sys, self.cs, self.ctrl, z, act)
        return z, act, value


def _make_point(sys, cs, ctrl, z, act) -> TangencyPoint:
    value, u, i_star, degenerate = min_max_lie(sys, cs, ctrl, z, act)
    return TangencyPoint(np.asarray(z, dtype=float), frozenset(act), i_star,
                         np.asarray(u, dtype=float), abs(value), degenerate)


def find_tangency_points(sys: SystemModel, cs: ConstraintSet, ctrl: ControlSet, face: int,
                         search: FaceSearchOptions) -> list:
    """Points of the face where ``min_u max_i L_f g_i`` changes sign (or vanishes)."""
    if not 0 <= face < cs.p:
        raise ContractError(f"face index {face} out of range 0..{cs.p - 1}")
    lo = np.asarray(search.lower, dtype=float)
    hi = np.asarray(search.upper, dtype=float)
    n = sys.n
    if lo.shape != (n,) or hi.shape != (n,) or np.any(lo > hi):
        raise ContractError("search box must have n ordered bounds")
    center = 0.5 * (lo + hi)
    grad_c = cs.grad(face, project_to_face(cs, face, center, search.newton_tol,
                                           search.newton_iters))
    elim = int(np.argmax(np.abs(grad_c)))
    free = [k for k in range(n) if k != elim]
    ev = _FaceEval(sys, cs, ctrl, face, search, elim, center)

    axes = [np.linspace(lo[k], hi[k], search.resolution) for k in free]
    shape = tuple(len(a) for a in axes)
    seeds = np.empty(shape + (n,))
    seeds[...] = center
    for dim, k in enumerate(free):
        idx = [None] * len(free)
        idx[dim] = slice(None)
        seeds[..., k] = axes[dim][tuple(idx)]

    zs = np.empty(shape + (n,))
    phis = np.full(shape, np.nan)
    acts = np.empty(shape, dtype=object)
    for ind in np.ndindex(*shape):
        z, act, val = ev.phi(seeds[ind])
        zs[ind] = z
        acts[ind] = act
        if act is not None:
            phis[ind] = val

    found: list[TangencyPoint] = []

    def add(z, act):
        if any(np.linalg.norm(tp.z - z) <= search.dedup_tol for tp in found):
            return
        tp = _make_point(sys, cs, ctrl, z, act)
        if tp.residual <= search.accept_tol:
            found.append(tp)

    for ind in np.ndindex(*shape):
        if acts[ind] is not None and abs(phis[ind]) <= search.bisect_tol:
            add(zs[ind], acts[ind])

    for dim in range(len(free)):
        for ind in np.ndindex(*shape):
            if ind[dim] + 1 >= shape[dim]:
                continue
            nxt = ind[:dim] + (ind[dim] + 1,) + ind[dim + 1:]
            pa, pb = phis[ind], phis[nxt]
            a_ok, b_ok = acts[ind] is not None, acts[nxt] is not None
            if a_ok and b_ok:
                if abs(pa) > search.bisect_tol and abs(pb) > search.bisect_tol and pa * pb < 0:
                    res = _bisect_phi(ev, seeds[ind], seeds[nxt], pa, search)
                    if res is not None:
                        add(*res)
            elif a_ok != b_ok:
                # the face leaves G between the nodes: examine the corner
                inside, outside = (ind, nxt) if a_ok else (nxt, ind)
                res = _corner(ev, seeds[inside], seeds[outside], search)
                if res is not None:
                    add(*res)
    found.sort(key=lambda tp: tuple(tp.z))
    return found


def _bisect_phi(ev: _FaceEval, sa, sb, pa, opts: FaceSearchOptions):
    a, b = 0.0, 1.0
    z = None
    act = None
    for _ in range(200):
        mid = 0.5 * (a + b)
        z, act, val = ev.phi(sa + mid * (sb - sa))
        if act is None:
            return None
        if abs(val) <= opts.bisect_tol:
            return z, act
        if (val > 0) == (pa > 0):
            a = mid
        else:
            b = mid
        if b - a < 1e-16:
            break
    return (z, act) if act is not None else None


def _corner(ev: _FaceEval, s_in, s_out, opts: FaceSearchOptions):
    """Locate where the face meets another constraint between two seeds."""
    cs = ev.cs
    z_out = ev.point(s_out)
    g_out = cs.values(z_out)
    g_out[ev.face] = -np.inf
    j = int(np.argmax(g_out))
    a, b = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (a + b)
        z = ev.point(s_in + mid * (s_out - s_in))
        gj = float(cs.values(z)[j])
        if abs(gj) < 0.5 * cs.activation_tol:
            break
        if gj < 0:
            a = mid
        else:
            b = mid
    else:
        return None
    act = ev.active(z)
    if act is None or j not in act:
        return None
    value, _, _, _ = min_max_lie(ev.sys, cs, ev.ctrl, z, act)
    if abs(value) <= opts.accept_tol:
        return z, act
    return None


def find_all_tangency_points(sys, cs, ctrl, search: FaceSearchOptions) -> list:
    """Tangency points over every face, deduplicated across faces."""
    out: list[TangencyPoint] = []
    for face in range(cs.p):
        for tp in find_tangency_points(sys, cs, ctrl, face, search):
            if not any(np.linalg.norm(tp.z - q.z) <= search.dedup_tol for q in out):
                out.append(tp)
    return out
