"""Backward integration of barrier arcs and assembly of the admissible boundary.

An arc ends (at ``t = 0``) at a tangency point ``z`` with costate
``lambda(0) = Dg_i*(z)``; it is integrated backward along

    x' = f(x, u*),   lambda' = -(df/dx)^T lambda,   u* = argmin_u lambda . f(x, u).

For affine systems with an interval or box control set the minimiser is
bang-bang and is held constant between zero crossings of the switching
functions ``(B^T lambda)_j``, which are located as integrator events.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractError
from .model import ConstraintSet, ControlKind, ControlSet, SystemModel, classify_region, RegionLabel
from .ode import Event, IntegratorOptions, Trajectory, integrate
from .tangency import (TangencyPoint, minimize_hamiltonian, project_to_face,
                       usable_part)

SWITCH_TOL = 1e-12


class ArcTermination(str, enum.Enum):
    LEFT_CONSTRAINT_SET = "LeftConstraintSet"
    REACHED_HORIZON = "ReachedHorizon"
    HAMILTONIAN_DRIFT = "HamiltonianDrift"
    SELF_INTERSECTION = "SelfIntersection"


@dataclass(frozen=True)
class BarrierOptions:
    integrator: IntegratorOptions = field(default_factory=IntegratorOptions)
    t_max: float = 50.0
    loop_tol: float = 1e-6
    drift_tol: float = 1e-5
    switch_arm_tol: float = 1e-9
    probe_steps: int = 10
    chatter_factor: float = 10.0


@dataclass(frozen=True)
class BarrierArc:
    traj: Trajectory  # augmented state (x, lambda); times run from 0 down to -T
    controls: np.ndarray  # (N, m)
    endpoint: TangencyPoint
    termination: ArcTermination
    switch_times: tuple = ()
    t_bar: float = 0.0
    note: str = ""
    trimmed_at: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.traj.states.shape[1] // 2

    @property
    def times(self) -> np.ndarray:
        return self.traj.times

    @property
    def x(self) -> np.ndarray:
        return self.traj.states[:, : self.n]

    @property
    def lam(self) -> np.ndarray:
        return self.traj.states[:, self.n:]

    def __len__(self) -> int:
        return len(self.traj.times)


def _check_tangency(sys, cs, tp: TangencyPoint) -> None:
    if classify_region(cs, tp.z) is not RegionLabel.BOUNDARY:
        raise ContractError(f"tangency point {tp.z.tolist()} is not on the constraint boundary")
    lie = float(cs.grad(tp.i_star, tp.z) @ sys.f(tp.z, tp.u_star))
    if abs(lie) > 1e-6:
        raise ContractError(f"tangency residual {lie:.3g} exceeds 1e-6 at {tp.z.tolist()}")


def _bang_bang(sys: SystemModel, ctrl: ControlSet) -> bool:
    return sys.is_affine and (ctrl.m == 1 or ctrl.kind is ControlKind.BOX)


def _aug_field(sys: SystemModel, n: int, u: np.ndarray):
    def fld(t, y):
        x, lam = y[:n], y[n:]
        return np.concatenate([sys.f(x, u), -sys.jac(x, u).T @ lam])
    return fld


def _continuous_field(sys: SystemModel, ctrl: ControlSet, n: int):
    def fld(t, y):
        x, lam = y[:n], y[n:]
        u = minimize_hamiltonian(sys, ctrl, x, lam).u_star
        return np.concatenate([sys.f(x, u), -sys.jac(x, u).T @ lam])
    return fld


def _events(sys, cs, n, u, switching: bool, drift_tol: float):
    evs = []
    eps = cs.activation_tol
    for i in range(cs.p):
        evs.append(Event(lambda t, y, i=i: float(cs.values(y[:n])[i]) - eps,
                         terminal=True, direction=1, name=f"exit{i}"))
    evs.append(Event(lambda t, y: abs(float(y[n:] @ sys.f(y[:n], u))) - drift_tol
                     if u is not None else -1.0, terminal=True, direction=1, name="drift"))
    if switching:
        for j in range(sys.m):
            evs.append(Event(lambda t, y, j=j: float((sys.input_matrix(y[:n]).T @ y[n:])[j]),
                             terminal=True, name=f"switch{j}"))
    return evs


def _flip(u: np.ndarray, j: int, ctrl: ControlSet) -> np.ndarray:
    v = u.copy()
    lo, hi = ctrl.lo[j], ctrl.hi[j]
    v[j] = hi if abs(u[j] - lo) <= abs(u[j] - hi) else lo
    return v


def _self_intersection(x: np.ndarray, lam: np.ndarray, tol: float, gap: int = 10) -> Optional[int]:
    """Index of the first node that revisits an earlier node with a similar normal."""
    if len(x) <= gap:
        return None
    tree = cKDTree(x)
    first = None
    for i, j in tree.query_pairs(tol):
        i, j = min(i, j), max(i, j)
        if j - i <= gap:
            continue
        li, lj = lam[i], lam[j]
        cos = float(li @ lj) / (np.linalg.norm(li) * np.linalg.norm(lj) + 1e-300)
        if cos > 0.99 and (first is None or j < first):
            first = j
    return first


def _run_branch(sys, cs, ctrl, tp, y0, u0, opts: BarrierOptions, horizon: float):
    """Integrate one bang-bang branch backward; returns the arc pieces."""
    n = sys.n
    iopt = replace(opts.integrator, event_arm_tol=opts.switch_arm_tol)
    times, states, derivs, controls = [], [], [], []
    switches: list = []
    t0, y, u = 0.0, np.array(y0, dtype=float), np.array(u0, dtype=float)
    termination = ArcTermination.REACHED_HORIZON
    note = ""
    while True:
        evs = _events(sys, cs, n, u, True, opts.drift_tol)
        traj = integrate(_aug_field(sys, n, u), y, t0, -horizon, iopt, evs)
        skip = 1 if times else 0
        times.extend(traj.times[skip:])
        states.extend(traj.states[skip:])
        derivs.extend(traj.derivs[skip:])
        controls.extend([u.copy()] * (len(traj.times) - skip))
        if traj.terminated is None:
            break
        name = evs[traj.terminated].name
        if name.startswith("exit"):
            termination = ArcTermination.LEFT_CONSTRAINT_SET
            break
        if name == "drift":
            termination = ArcTermination.HAMILTONIAN_DRIFT
            note = "Hamiltonian drift exceeded tolerance"
            break
        j = int(name[len("switch"):])
        t_sw = traj.final_time
        if switches and abs(switches[-1] - t_sw) < opts.chatter_factor * iopt.event_tol:
            termination = ArcTermination.HAMILTONIAN_DRIFT
            note = f"chattering: repeated switching near t={t_sw:.6g}"
            break
        switches.append(t_sw)
        u = _flip(u, j, ctrl)
        t0, y = t_sw, traj.final_state
        if t0 <= -horizon:
            break
    return (np.array(times), np.array(states), np.array(derivs), np.array(controls),
            tuple(switches), termination, note)


def _consistent(sys, ctrl, states, u, n) -> bool:
    """The held control must agree with the Hamiltonian minimiser off the switching set."""
    for y in states[1:]:
        a = sys.input_matrix(y[:n]).T @ y[n:]
        for j in range(sys.m):
            if abs(a[j]) > SWITCH_TOL:
                want = ctrl.lo[j] if a[j] > 0 else ctrl.hi[j]
                if abs(want - u[j]) > 1e-12:
                    return False
    return True


def _finish(sys, cs, tp, pieces, opts: BarrierOptions) -> BarrierArc:
    times, states, derivs, controls, switches, termination, note = pieces
    n = sys.n
    cut = _self_intersection(states[:, :n], states[:, n:], opts.loop_tol)
    if cut is not None:
        times, states, derivs, controls = times[: cut + 1], states[: cut + 1], derivs[: cut + 1], controls[: cut + 1]
        switches = tuple(s for s in switches if s >= times[-1])
        termination = ArcTermination.SELF_INTERSECTION
        note = "arc revisits an earlier node"
    traj = Trajectory(times, states, derivs)
    return BarrierArc(traj, controls, tp, termination, switches, note=note)


def integrate_barrier_arcs(sys: SystemModel, cs: ConstraintSet, ctrl: ControlSet,
                           tp: TangencyPoint, opts: Optional[BarrierOptions] = None) -> list:
    """All consistent backward arcs ending at ``tp``.

    When the switching function vanishes at the tangency point both signs of
    each vanishing component are tried; a branch is kept when its control
    agrees with the Hamiltonian minimiser right after the start and it does not
    leave G within the first few steps.
    """
    opts = opts or BarrierOptions()
    _check_tangency(sys, cs, tp)
    n = sys.n
    lam0 = cs.grad(tp.i_star, tp.z)
    y0 = np.concatenate([tp.z, lam0])

    if not _bang_bang(sys, ctrl):
        fld = _continuous_field(sys, ctrl, n)
        evs = _events(sys, cs, n, None, False, opts.drift_tol)
        traj = integrate(fld, y0, 0.0, -opts.t_max, opts.integrator, evs)
        controls = np.array([minimize_hamiltonian(sys, ctrl, y[:n], y[n:]).u_star
                             for y in traj.states])
        if traj.terminated is None:
            term = ArcTermination.REACHED_HORIZON
        else:
            term = ArcTermination.LEFT_CONSTRAINT_SET
        pieces = (traj.times, traj.states, traj.derivs, controls, (), term, "")
        arc = _finish(sys, cs, tp, pieces, opts)
        resid = np.abs([y[n:] @ sys.f(y[:n], u) for y, u in zip(traj.states, controls)])
        if np.max(resid) > opts.drift_tol:
            arc = replace(arc, termination=ArcTermination.HAMILTONIAN_DRIFT,
                          note="Hamiltonian drift exceeded tolerance")
        return [arc]

    a0 = sys.input_matrix(tp.z).T @ lam0
    u_base, _ = ctrl.argmin_linear(a0, SWITCH_TOL)
    flat = [j for j in range(sys.m) if abs(a0[j]) <= SWITCH_TOL]
    candidates = []
    for signs in itertools.product((0, 1), repeat=len(flat)):
        u = u_base.copy()
        for j, s in zip(flat, signs):
            u[j] = ctrl.hi[j] if s else ctrl.lo[j]
        candidates.append(u)

    h = opts.integrator.step
    probe_span = opts.probe_steps * h
    arcs, rejected = [], []
    for u in candidates:
        probe = _run_branch(sys, cs, ctrl, tp, y0, u, opts, probe_span)
        ok_exit = probe[5] is not ArcTermination.LEFT_CONSTRAINT_SET
        ok_sign = _consistent(sys, ctrl, probe[1][: opts.probe_steps + 1], u, n)
        if len(flat) == 0 or (ok_exit and ok_sign):
            arcs.append(_finish(sys, cs, tp, _run_branch(sys, cs, ctrl, tp, y0, u, opts, opts.t_max), opts))
        else:
            rejected.append(u)
    if not arcs:
        # no branch passed the start-up checks; keep the first one, flagged
        u = candidates[0]
        arc = _finish(sys, cs, tp, _run_branch(sys, cs, ctrl, tp, y0, u, opts, opts.t_max), opts)
        arcs.append(replace(arc, note=(arc.note + "; " if arc.note else "") + "no consistent branch"))
    return arcs


def integrate_barrier_arc(sys: SystemModel, cs: ConstraintSet, ctrl: ControlSet,
                          tp: TangencyPoint, opts: Optional[BarrierOptions] = None) -> BarrierArc:
    """The longest consistent arc ending at ``tp``."""
    arcs = integrate_barrier_arcs(sys, cs, ctrl, tp, opts)
    return max(arcs, key=lambda a: abs(a.times[-1]))


def barrier_arcs(sys, cs, ctrl, points: Sequence[TangencyPoint],
                 opts: Optional[BarrierOptions] = None, threads: int = 1) -> list:
    """Arcs for every tangency point (each point may contribute several branches)."""
    if threads > 1 and len(points) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            groups = list(pool.map(lambda tp: integrate_barrier_arcs(sys, cs, ctrl, tp, opts), points))
    else:
        groups = [integrate_barrier_arcs(sys, cs, ctrl, tp, opts) for tp in points]
    return [a for g in groups for a in g]


def _near_switch(times: np.ndarray, switches, tol: float) -> np.ndarray:
    mask = np.zeros(len(times), dtype=bool)
    for s in switches:
        mask |= np.abs(times - s) <= tol
    return mask


def hamiltonian_values(sys: SystemModel, arc: BarrierArc) -> np.ndarray:
    return np.array([float(lam @ sys.f(x, u))
                     for x, lam, u in zip(arc.x, arc.lam, arc.controls)])


def hamiltonian_residual(sys: SystemModel, arc: BarrierArc, event_tol: float = 1e-10) -> float:
    """Max ``|H|`` over stored nodes away from switching instants."""
    if len(arc) <= 1:
        return abs(endpoint_residual(sys, arc))
    h = np.abs(hamiltonian_values(sys, arc))
    mask = ~_near_switch(arc.times, arc.switch_times, event_tol)
    return float(np.max(h[mask])) if np.any(mask) else 0.0


def endpoint_residual(sys: SystemModel, arc: BarrierArc) -> float:
    """``lambda(0) . f(z, u*)``, i.e. the tangency residual at the endpoint."""
    tp = arc.endpoint
    return float(arc.lam[0] @ sys.f(tp.z, tp.u_star))


# forward replay -----------------------------------------------------------

def _segments(arc: BarrierArc, t_start: float):
    """Control pieces ``(ta, tb, u)`` covering ``[t_start, 0]`` in forward order."""
    cuts = sorted(set([t_start, 0.0] + [s for s in arc.switch_times if t_start < s < 0.0]))
    out = []
    for ta, tb in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (ta + tb)
        k = int(np.argmin(np.abs(arc.times - mid)))
        # the node nearest the midpoint lies strictly inside the piece
        out.append((ta, tb, arc.controls[k]))
    return out


def replay_forward(sys: SystemModel, arc: BarrierArc, index: int,
                   opts: Optional[IntegratorOptions] = None) -> np.ndarray:
    """Integrate ``x' = f(x, u(t))`` from node ``index`` to ``t = 0`` with the recorded controls."""
    opts = opts or IntegratorOptions()
    t_start = float(arc.times[index])
    x = arc.x[index].copy()
    for ta, tb, u in _segments(arc, t_start):
        if tb - ta <= 0:
            continue
        x = integrate(lambda t, y, u=u: sys.f(y, u), x, ta, tb, opts).final_state
    return x


def transport_matrix(sys: SystemModel, arc: BarrierArc, index: int,
                     opts: Optional[IntegratorOptions] = None) -> np.ndarray:
    """Fundamental matrix ``Phi(0, t_index)`` of the variational equation along the arc."""
    opts = opts or IntegratorOptions()
    n = sys.n
    t_start = float(arc.times[index])
    y = np.concatenate([arc.x[index], np.eye(n).ravel()])
    for ta, tb, u in _segments(arc, t_start):
        if tb - ta <= 0:
            continue

        def fld(t, w, u=u):
            x = w[:n]
            phi = w[n:].reshape(n, n)
            return np.concatenate([sys.f(x, u), (sys.jac(x, u) @ phi).ravel()])

        y = integrate(fld, y, ta, tb, opts).final_state
    return y[n:].reshape(n, n)


def flow_sensitivity(sys: SystemModel, arc: BarrierArc, index: int, eps: float = 1e-6,
                     opts: Optional[IntegratorOptions] = None) -> np.ndarray:
    """Central finite differences of the open-loop flow map from node ``index`` to ``t = 0``."""
    opts = opts or IntegratorOptions()
    n = sys.n
    t_start = float(arc.times[index])
    cols = []
    for j in range(n):
        out = []
        for sgn in (1.0, -1.0):
            x = arc.x[index].copy()
            x[j] += sgn * eps
            for ta, tb, u in _segments(arc, t_start):
                if tb - ta > 0:
                    x = integrate(lambda t, y, u=u: sys.f(y, u), x, ta, tb, opts).final_state
            out.append(x)
        cols.append((out[0] - out[1]) / (2 * eps))
    return np.stack(cols, axis=1)


# boundary assembly ----------------------------------------------------------

@dataclass(frozen=True)
class AdmissibleBoundary:
    arcs: tuple
    usable_segments: tuple  # tuple of (face, (k, n) array)
    corners: tuple  # tuple of n-vectors
    notes: tuple = ()


def _seg_intersections(pa: np.ndarray, pb: np.ndarray, tol: float = 1e-9):
    """Crossings of two planar polylines: list of ``(ia, ta, ib, tb, point)``."""
    if len(pa) < 2 or len(pb) < 2:
        return []
    out = []
    mids_b = 0.5 * (pb[1:] + pb[:-1])
    rad_b = 0.5 * np.linalg.norm(pb[1:] - pb[:-1], axis=1)
    tree = cKDTree(mids_b)
    rmax = float(np.max(rad_b)) if len(rad_b) else 0.0
    for i in range(len(pa) - 1):
        a0, a1 = pa[i], pa[i + 1]
        mid = 0.5 * (a0 + a1)
        r = 0.5 * float(np.linalg.norm(a1 - a0)) + rmax + 1e-6
        for k in tree.query_ball_point(mid, r):
            b0, b1 = pb[k], pb[k + 1]
            da, db = a1 - a0, b1 - b0
            den = da[0] * db[1] - da[1] * db[0]
            if abs(den) < 1e-18:
                continue
            w = b0 - a0
            ta = (w[0] * db[1] - w[1] * db[0]) / den
            tb = (w[0] * da[1] - w[1] * da[0]) / den
            if -tol <= ta <= 1 + tol and -tol <= tb <= 1 + tol:
                out.append((i, float(ta), k, float(tb), a0 + ta * da))
    return out


def _proximity_hits(pa, pb, tol=1e-6):
    tree = cKDTree(pb)
    out = []
    for i, p in enumerate(pa):
        for k in tree.query_ball_point(p, tol):
            out.append((i, 0.0, k, 0.0, p.copy()))
    return out


def _truncate(arc: BarrierArc, i: int, t: float, point: np.ndarray) -> BarrierArc:
    """Keep nodes ``0..i`` plus the crossing point inside segment ``i``."""
    tr = arc.traj
    s_new = tr.states[i] + t * (tr.states[i + 1] - tr.states[i])
    s_new[: arc.n] = point
    d_new = tr.derivs[i] + t * (tr.derivs[i + 1] - tr.derivs[i])
    t_new = tr.times[i] + t * (tr.times[i + 1] - tr.times[i])
    times = np.r_[tr.times[: i + 1], t_new]
    states = np.vstack([tr.states[: i + 1], s_new])
    derivs = np.vstack([tr.derivs[: i + 1], d_new])
    controls = np.vstack([arc.controls[: i + 1], arc.controls[i][None, :]])
    sw = tuple(s for s in arc.switch_times if s >= t_new)
    return replace(arc, traj=Trajectory(times, states, derivs), controls=controls,
                   switch_times=sw, trimmed_at=np.array(point))


def _trim_pass(sys, arcs: list):
    """Cut each arc at its first crossing where it continues to the inside of the other arc."""
    changed = False
    out = list(arcs)
    for a in range(len(out)):
        best = None
        for b in range(len(out)):
            if a == b:
                continue
            for ia, ta, ib, tb, p in _seg_intersections(out[a].x, out[b].x):
                if ia == 0 and ta <= 1e-9:
                    continue  # shared start at the tangency point
                pos = ia + ta
                lam_b = out[b].lam[ib] + tb * (out[b].lam[ib + 1] - out[b].lam[ib])
                cont = out[a].x[ia + 1] - out[a].x[ia]  # direction of backward travel
                if float(cont @ lam_b) < 0 and (best is None or pos < best[0]):
                    best = (pos, ia, ta, p)
        if best is not None:
            pos, ia, ta, p = best
            if pos < len(out[a]) - 1 - 1e-9:
                out[a] = _truncate(out[a], ia, ta, p)
                changed = True
    return out, changed


def _usable_segments(sys, cs, ctrl, box, density: int):
    segs = []
    if box is None:
        return segs
    lo = np.asarray([b[0] for b in box], dtype=float)
    hi = np.asarray([b[1] for b in box], dtype=float)
    n = sys.n
    for face in range(cs.p):
        center = 0.5 * (lo + hi)
        try:
            c = project_to_face(cs, face, center)
        except Exception:
            continue
        elim = int(np.argmax(np.abs(cs.grad(face, c))))
        free = [k for k in range(n) if k != elim]
        axes = [np.linspace(lo[k], hi[k], density) for k in free]
        run: list = []
        for combo in itertools.product(*axes):
            seed = center.copy()
            seed[free] = combo
            try:
                z = project_to_face(cs, face, seed)
            except Exception:
                z = None
            ok = (z is not None and classify_region(cs, z) is RegionLabel.BOUNDARY
                  and usable_part(sys, cs, ctrl, z))
            if ok:
                run.append(z)
            elif run:
                segs.append((face, np.array(run)))
                run = []
        if run:
            segs.append((face, np.array(run)))
    return segs


def assemble_boundary(sys: SystemModel, cs: ConstraintSet, ctrl: ControlSet, arcs: Sequence,
                      sampling: int = 200, box=None, trim: bool = True) -> AdmissibleBoundary:
    """Barrier arcs, usable parts of the constraint faces and corner points."""
    notes = []
    arcs = list(arcs)
    n = sys.n
    if n == 2 and trim:
        for _ in range(4 * max(1, len(arcs))):
            arcs, changed = _trim_pass(sys, arcs)
            if not changed:
                break
    elif n != 2 and trim:
        notes.append("corner trimming is only defined for planar systems; arcs left untrimmed")
    corners = []
    for a, b in itertools.combinations(range(len(arcs)), 2):
        pa, pb = arcs[a].x, arcs[b].x
        hits = _seg_intersections(pa, pb) if n == 2 else _proximity_hits(pa, pb)
        for _, _, _, _, p in hits:
            if not any(np.linalg.norm(p - q) <= 1e-6 for q in corners):
                corners.append(np.array(p))
    # the tangency endpoints themselves are not corners
    ends = [arc.endpoint.z for arc in arcs]
    corners = [c for c in corners if all(np.linalg.norm(c - e) > 1e-6 for e in ends)]
    if box is None and arcs:
        pts = np.vstack([arc.x for arc in arcs])
        box = tuple((float(pts[:, k].min()) - 1.0, float(pts[:, k].max()) + 1.0) for k in range(n))
    segs = _usable_segments(sys, cs, ctrl, box, sampling)
    return AdmissibleBoundary(tuple(arcs), tuple(segs), tuple(corners), tuple(notes))
