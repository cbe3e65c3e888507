"""Brute-force admissibility checks by forward simulation.

A state is Admissible (up to the horizon T) when some sampled control keeps
every constraint satisfied at all integration nodes on [0, T]. Three families
of controls are tried, in this order, and a cell stops as soon as it has a
witness:

1. constant controls at the extreme points and the centre of the control set;
2. a beam search over piecewise-constant controls drawn from a small alphabet
   (this is what finds controls that hover, such as ``u = 0`` on ``x2 = 1`` in
   the academic example, which random bang-bang signals essentially never do);
3. ``n_signals`` seeded random bang-bang signals.

All randomness for cell ``i`` derives from ``(seed, i)``, so results do not
depend on chunking or on the number of worker threads.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .model import ConstraintSet, ControlSet, SystemModel
from .ode import Event, IntegratorOptions, Trajectory, integrate


class VerdictLabel(str, enum.Enum):
    ADMISSIBLE = "Admissible"
    INADMISSIBLE = "Inadmissible"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant open-loop control on ``[0, inf)``.

    ``values[k]`` is applied on ``[switch_times[k-1], switch_times[k])`` with
    ``switch_times[-1] = 0`` implied; the last value is held forever.
    """

    kind: str  # "constant" | "piecewise" | "bangbang"
    values: np.ndarray  # (k, m)
    switch_times: tuple = ()
    seed: Optional[int] = None
    switch_count: int = 0

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", vals)
        if len(self.switch_times) != len(vals) - 1:
            raise ContractError("need exactly one more value than switch times")
        st = np.asarray(self.switch_times, dtype=float)
        if len(st) and (np.any(np.diff(st) <= 0) or st[0] <= 0):
            raise ContractError("switch times must be positive and strictly increasing")

    @classmethod
    def constant(cls, u) -> "ControlSignal":
        return cls("constant", np.atleast_2d(np.asarray(u, dtype=float)))

    @classmethod
    def piecewise(cls, switch_times, values) -> "ControlSignal":
        return cls("piecewise", np.asarray(values, dtype=float), tuple(float(t) for t in switch_times))

    @classmethod
    def bang_bang(cls, ctrl: ControlSet, T: float, switch_count: int, seed: int,
                  step: Optional[float] = None) -> "ControlSignal":
        """Random extreme values with ``switch_count`` uniformly drawn switch times.

        With ``step`` given, switch times are snapped to multiples of it (and
        coincident ones merged).
        """
        rt, rv = _signal_rngs(seed)
        times, vals = _draw_bang_bang(rt, rv, ctrl, T, switch_count, 1)
        if step:
            idx = _snap(times, step)[0]
            t = idx[idx < _NEVER] * step
        else:
            t = times[0][times[0] > 0]
        # piece k is the value after k switches, as in the batched engine
        return cls("bangbang", vals[0, : len(t) + 1], tuple(float(x) for x in t), seed, switch_count)

    def at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(np.asarray(self.switch_times), t, side="right"))
        return self.values[k]

    def pieces(self, T: float) -> list:
        cuts = [0.0] + [t for t in self.switch_times if t < T] + [T]
        return [(a, b, self.values[k]) for k, (a, b) in enumerate(zip(cuts[:-1], cuts[1:]))]

    def in_set(self, ctrl: ControlSet) -> bool:
        return all(ctrl.contains(v, 1e-9) for v in self.values)

    def as_dict(self) -> dict:
        d = {"kind": self.kind, "values": self.values.tolist(),
             "switch_times": list(self.switch_times)}
        if self.seed is not None:
            d.update(seed=self.seed, switch_count=self.switch_count)
        return d


def _signal_rngs(seed):
    """Independent generators for switch times and values, so prefixes are stable."""
    ss = np.random.SeedSequence(seed)
    return tuple(np.random.default_rng(c) for c in ss.spawn(2))


def _draw_bang_bang(rt, rv, ctrl: ControlSet, T: float, switch_count: int, count: int):
    """Sorted switch times ``(count, S)`` and extreme values ``(count, S+1, m)``.

    Both arrays are filled row by row, so signal ``k`` does not depend on ``count``.
    """
    S = switch_count
    times = np.sort(rt.uniform(0.0, T, (count, S)), axis=1)
    vals = ctrl.random_extreme(rv, count * (S + 1)).reshape(count, S + 1, ctrl.m)
    return times, vals


_NEVER = np.iinfo(np.int64).max


def _snap(times: np.ndarray, step: float) -> np.ndarray:
    """Switch times as step indices; duplicates and zero indices become ``_NEVER``."""
    idx = np.rint(times / step).astype(np.int64)
    if idx.shape[1]:
        dup = np.zeros_like(idx, dtype=bool)
        dup[:, 1:] = idx[:, 1:] <= idx[:, :-1]
        idx = np.sort(np.where(dup | (idx <= 0), _NEVER, idx), axis=1)
    return idx


@dataclass(frozen=True)
class AdmissibilityVerdict:
    label: VerdictLabel
    min_sup_estimate: float
    horizon: float
    samples: int
    witness: Optional[ControlSignal] = None
    survival: float = 0.0

    def as_dict(self) -> dict:
        return {"label": self.label.value, "min_sup_estimate": float(self.min_sup_estimate),
                "horizon": float(self.horizon), "samples": int(self.samples),
                "survival": float(self.survival),
                "witness": self.witness.as_dict() if self.witness is not None else None}


def default_threads() -> int:
    env = os.environ.get("BARRIERKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, min(8, os.cpu_count() or 1))


@dataclass(frozen=True)
class OracleOptions:
    T: float = 20.0
    n_signals: int = 200
    switch_count: int = 8
    seed: int = 0
    confident_margin: float = 0.05
    step: float = 0.05  # RK4 step of the batched simulations
    stage: float = 0.1  # duration of one beam-search control piece
    beam_width: int = 16
    levels: int = 5
    merge_res: float = 0.01
    lookahead: float = 1.0  # beam ranking charges tau * (approach rate) against the slack
    stop_above: float = 1.0  # trajectories stop once their running max g reaches this
    use_beam: bool = True
    use_constants: bool = True
    chunk: int = 256
    threads: Optional[int] = None

    def __post_init__(self):
        if not self.T > 0:
            raise ContractError("horizon T must be positive")
        if self.n_signals < 0 or self.switch_count < 0:
            raise ContractError("signal counts must be non-negative")
        r = self.stage / self.step
        if abs(r - round(r)) > 1e-9 or round(r) < 1:
            raise ContractError("stage must be a positive multiple of step")


class SimulationResult(NamedTuple):
    traj: Trajectory
    sup_max_g: float
    first_violation: Optional[float]


def simulate_forward(sys: SystemModel, cs: ConstraintSet, x0, sig: ControlSignal, T: float,
                     opts: Optional[IntegratorOptions] = None) -> SimulationResult:
    """Integrate under ``sig`` on ``[0, T]``; report the running max of ``max_i g_i``.

    A violation is the first time some ``g_i`` reaches ``+eps_g``.
    """
    if not T > 0:
        raise ContractError("horizon T must be positive")
    opts = opts or IntegratorOptions(step=0.05)
    x = np.asarray(x0, dtype=float).reshape(sys.n)
    eps = cs.activation_tol
    g0 = float(np.max(cs.values(x)))
    first = 0.0 if g0 >= eps else None
    evs = [Event(lambda t, y, i=i: float(cs.values(y)[i]) - eps, direction=1, name=f"g{i}")
           for i in range(cs.p)]
    times, states, derivs, hits = [], [], [], []
    y = x
    for ta, tb, u in sig.pieces(T):
        if tb - ta <= 1e-14:
            continue
        tr = integrate(lambda t, z, u=u: sys.f(z, u), y, ta, tb, opts, evs)
        skip = 1 if times else 0
        times.extend(tr.times[skip:])
        states.extend(tr.states[skip:])
        derivs.extend(tr.derivs[skip:])
        hits.extend(tr.events)
        y = tr.final_state
    traj = Trajectory(np.array(times), np.array(states), np.array(derivs), tuple(hits))
    gs = np.max(cs.values(traj.states.T), axis=0)
    sup = float(np.max(gs))
    if first is None and hits:
        first = min(h.time for h in hits)
    if first is None and sup >= eps:
        first = float(traj.times[int(np.argmax(gs >= eps))])
    return SimulationResult(traj, sup, first)


# batched engine -----------------------------------------------------------

def _rk4_batch(sys: SystemModel, X: np.ndarray, U: np.ndarray, h: float) -> np.ndarray:
    """One RK4 step for a batch: ``X`` is ``(n, P)``, ``U`` is ``(m, P)``."""
    k1 = sys.f(X, U)
    k2 = sys.f(X + 0.5 * h * k1, U)
    k3 = sys.f(X + 0.5 * h * k2, U)
    k4 = sys.f(X + h * k3, U)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _gvals(cs: ConstraintSet, X: np.ndarray) -> np.ndarray:
    return np.asarray(cs.values(X), dtype=float).reshape(cs.p, -1)


def _gmax(cs: ConstraintSet, X: np.ndarray) -> np.ndarray:
    return np.max(_gvals(cs, X), axis=0)


@dataclass
class _CellResults:
    survival: np.ndarray  # (N,)
    min_sup: np.ndarray  # (N, L) at each ladder horizon
    samples: np.ndarray  # (N,)
    witness: list  # per cell ControlSignal or None


class _Engine:
    def __init__(self, sys, cs, ctrl, opts: OracleOptions, ladder: Sequence[float]):
        self.sys, self.cs, self.ctrl, self.opts = sys, cs, ctrl, opts
        self.ladder = np.array(sorted(ladder), dtype=float)
        self.T = float(self.ladder[-1])
        self.h = opts.step
        self.sub = int(round(opts.stage / opts.step))
        self.n_steps = int(math.ceil(self.T / self.h - 1e-9))
        # ladder horizons in steps (a horizon counts as reached at the first node at or after it)
        self.ladder_steps = np.array([int(math.ceil(t / self.h - 1e-9)) for t in self.ladder])
        self.eps = cs.activation_tol

    # -- a bank of open-loop schedules ------------------------------------
    def simulate_bank(self, X0: np.ndarray, sw: np.ndarray, vals: np.ndarray):
        """Simulate open-loop schedules from the rows of ``X0``.

        ``sw`` holds sorted switch step indices ``(P, S)`` padded with ``_NEVER``
        and ``vals`` the piece values ``(P, S+1, m)``. Returns the survival time
        ``(P,)`` and the running sup of ``max g`` at each ladder horizon ``(P, L)``.
        """
        P = X0.shape[0]
        L = len(self.ladder)
        surv = np.zeros(P)
        sup_at = np.zeros((P, L))
        if P == 0:
            return surv, sup_at
        sw = np.hstack([sw, np.full((P, 1), _NEVER, dtype=np.int64)])
        X = X0.T.copy()
        sup = _gmax(self.cs, X)
        piece = np.zeros(P, dtype=np.int64)
        live = np.arange(P)
        for s in range(self.n_steps):
            adv = sw[live, piece[live]] <= s
            piece[live[adv]] += 1
            U = vals[live, piece[live]].T
            X = _rk4_batch(self.sys, X, U, self.h)
            g = _gmax(self.cs, X)
            sup_l = np.maximum(sup[live], np.where(np.isfinite(g), g, np.inf))
            sup[live] = sup_l
            surv[live[sup_l < self.eps]] = (s + 1) * self.h
            for k in np.flatnonzero(self.ladder_steps == s + 1):
                sup_at[live, k] = sup_l
            keep = sup_l < self.opts.stop_above
            if not np.all(keep):
                live, X = live[keep], X[:, keep]
                if len(live) == 0:
                    break
        # stopped trajectories keep their final running sup at every later horizon
        stopped = np.ones(P, dtype=bool)
        stopped[live] = False
        sup_at[stopped] = sup[stopped, None]
        return surv, sup_at

    # -- beam search ------------------------------------------------------------
    def beam(self, X0: np.ndarray, keep_witness: bool):
        opts, sys, cs = self.opts, self.sys, self.cs
        C = X0.shape[0]
        L = len(self.ladder)
        V = self.ctrl.search_values(opts.levels)  # (K, m)
        K = len(V)
        B = opts.beam_width
        surv = np.zeros(C)
        sup_at = np.full((C, L), np.inf)
        n_stages = int(math.ceil(self.n_steps / self.sub))
        ladder_stage = {}
        for k, ls in enumerate(self.ladder_steps):
            ladder_stage.setdefault(int(math.ceil(ls / self.sub)), []).append(k)

        cell = np.arange(C)
        X = X0.T.copy()  # (n, P)
        g0 = _gmax(cs, X)
        sup = g0.copy()
        dead = np.full(C, np.inf)  # best running sup among paths stopped so far
        hist = []
        st = -1
        for st in range(n_stages):
            P = len(cell)
            if P == 0:
                break
            # expand every path by every control value
            cell_e = np.repeat(cell, K)
            parent = np.repeat(np.arange(P), K)
            cidx = np.tile(np.arange(K), P)
            Xe = np.repeat(X, K, axis=1)
            Ue = V[cidx].T
            supe = np.repeat(sup, K)
            gv = _gvals(cs, Xe)
            for _ in range(min(self.sub, self.n_steps - st * self.sub)):
                Xe = _rk4_batch(sys, Xe, Ue, self.h)
                gv_prev, gv = gv, _gvals(cs, Xe)
                g = np.max(gv, axis=0)
                g = np.where(np.isfinite(g), g, np.inf)
                supe = np.maximum(supe, g)
            t_end = min((st + 1) * self.sub, self.n_steps) * self.h
            alive = supe < self.eps
            if np.any(alive):
                np.maximum.at(surv, cell_e[alive], t_end)
            rate = np.maximum(gv - gv_prev, 0.0) / self.h
            margin = -np.max(gv + opts.lookahead * rate, axis=0)
            margin = np.where(np.isfinite(margin), margin, -np.inf)
            keep = supe < opts.stop_above
            if not np.all(keep):
                np.minimum.at(dead, cell_e[~keep], supe[~keep])
            for k in ladder_stage.get(st + 1, []):
                np.minimum.at(sup_at[:, k], cell_e, supe)
                sup_at[:, k] = np.minimum(sup_at[:, k], dead)
            if not np.any(keep):
                cell = cell[:0]
                break
            cell_e, parent, cidx = cell_e[keep], parent[keep], cidx[keep]
            Xe, supe, margin = Xe[:, keep], supe[keep], margin[keep]
            # merge near-identical states within a cell, then keep the best B per cell
            primary = np.maximum(supe, 0.0)
            q = np.rint(Xe / opts.merge_res).astype(np.int64)
            order = np.lexsort((-margin, primary) + tuple(q[::-1]) + (cell_e,))
            qs = q[:, order]
            ce = cell_e[order]
            first = np.ones(len(order), dtype=bool)
            first[1:] = (ce[1:] != ce[:-1]) | np.any(qs[:, 1:] != qs[:, :-1], axis=0)
            sel = order[first]
            order2 = sel[np.lexsort((-margin[sel], primary[sel], cell_e[sel]))]
            ce2 = cell_e[order2]
            starts = np.r_[0, np.flatnonzero(ce2[1:] != ce2[:-1]) + 1]
            rank = np.arange(len(order2)) - np.repeat(starts, np.diff(np.r_[starts, len(order2)]))
            chosen = order2[rank < B]
            cell, X, sup = cell_e[chosen], Xe[:, chosen], supe[chosen]
            if keep_witness:
                hist.append((parent[chosen].astype(np.int32), cidx[chosen].astype(np.int16)))
        for stage, ks in ladder_stage.items():
            if stage > st + 1:
                sup_at[:, ks] = dead[:, None]
        surv = np.where(g0 < self.eps, surv, 0.0)
        witnesses = [None] * C
        if keep_witness and len(cell):
            done = np.flatnonzero(sup < self.eps)
            best = {}
            for p in done:
                c = int(cell[p])
                if c not in best:
                    best[c] = p
            for c, p in best.items():
                seq = []
                for par, ci in reversed(hist):
                    seq.append(int(ci[p]))
                    p = int(par[p])
                seq.reverse()
                witnesses[c] = _compress(V, seq, opts.stage)
        samples = np.full(C, B * K)
        return surv, sup_at, witnesses, samples

    # -- full pipeline for a set of cells ------------------------------------
    def run(self, X0: np.ndarray, idx: np.ndarray, keep_witness: bool) -> _CellResults:
        opts = self.opts
        N = X0.shape[0]
        L = len(self.ladder)
        surv = np.zeros(N)
        min_sup = np.full((N, L), np.inf)
        samples = np.zeros(N, dtype=np.int64)
        wit = [None] * N
        g0 = _gmax(self.cs, X0.T)
        inside = g0 < self.eps
        min_sup[~inside] = g0[~inside, None]
        pending = np.flatnonzero(inside)

        def absorb(cells, s, sa, w=None):
            surv[cells] = np.maximum(surv[cells], s)
            min_sup[cells] = np.minimum(min_sup[cells], sa)
            if w is not None:
                for c, ww in zip(cells, w):
                    if wit[c] is None and ww is not None:
                        wit[c] = ww

        if opts.use_constants and len(pending):
            consts = np.vstack([self.ctrl.vertices(), self.ctrl.center[None, :]])
            Kc = len(consts)
            Xr = np.repeat(X0[pending], Kc, axis=0)
            vals = np.tile(consts[:, None, :], (len(pending), 1, 1))
            s, sa = self.simulate_bank(Xr, np.zeros((len(Xr), 0), dtype=np.int64), vals)
            s = s.reshape(len(pending), Kc)
            sa = sa.reshape(len(pending), Kc, L)
            best_c = np.argmax(s, axis=1)
            ws = None
            if keep_witness:
                ws = [ControlSignal.constant(consts[b]) if s[i, b] >= self.T - 1e-9 else None
                      for i, b in enumerate(best_c)]
            absorb(pending, s.max(axis=1), sa.min(axis=1), ws)
            samples[pending] += Kc
            pending = pending[surv[pending] < self.T - 1e-9]

        if opts.use_beam and len(pending):
            s, sa, ws, ns = self.beam(X0[pending], keep_witness)
            absorb(pending, s, sa, ws if keep_witness else None)
            samples[pending] += ns
            pending = pending[surv[pending] < self.T - 1e-9]

        if opts.n_signals and len(pending):
            M = opts.n_signals
            sw_all, val_all = [], []
            for c in pending:
                sw, vals = _cell_schedule(self.ctrl, opts, int(idx[c]), self.T, M)
                sw_all.append(sw)
                val_all.append(vals)
            sw = np.concatenate(sw_all)
            vals = np.concatenate(val_all)
            Xr = np.repeat(X0[pending], M, axis=0)
            s, sa = self.simulate_bank(Xr, sw, vals)
            s = s.reshape(len(pending), M)
            sa = sa.reshape(len(pending), M, L)
            ws = None
            if keep_witness:
                ws = []
                for i in range(len(pending)):
                    hit = np.flatnonzero(s[i] >= self.T - 1e-9)
                    if len(hit):
                        r = i * M + hit[0]
                        ws.append(_signal_from_schedule(sw[r], vals[r], self.h, opts.switch_count))
                    else:
                        ws.append(None)
            absorb(pending, s.max(axis=1), sa.min(axis=1), ws)
            samples[pending] += M
        return _CellResults(surv, min_sup, samples, wit)


def _compress(V: np.ndarray, seq: list, stage: float) -> ControlSignal:
    """Piecewise-constant signal from a sequence of alphabet indices, one per stage."""
    if not seq:
        return ControlSignal.constant(V[0])
    vals = [V[seq[0]]]
    times = []
    for k in range(1, len(seq)):
        if seq[k] != seq[k - 1]:
            times.append(k * stage)
            vals.append(V[seq[k]])
    if not times:
        return ControlSignal.constant(vals[0])
    return ControlSignal.piecewise(times, np.array(vals))


def _cell_schedule(ctrl: ControlSet, opts: OracleOptions, cell_index: int, T: float, count: int):
    """The ``count`` bang-bang schedules of one cell, snapped to the step grid."""
    rt, rv = _signal_rngs([opts.seed, cell_index])
    times, vals = _draw_bang_bang(rt, rv, ctrl, T, opts.switch_count, count)
    return _snap(times, opts.step), vals


def _signal_from_schedule(sw, vals, h, switch_count) -> ControlSignal:
    steps = [int(s) for s in sw if s != _NEVER]
    return ControlSignal("bangbang", vals[: len(steps) + 1], tuple(s * h for s in steps),
                         switch_count=switch_count)


def _chunks(n: int, size: int):
    for a in range(0, n, size):
        yield np.arange(a, min(n, a + size))


def _run_cells(sys, cs, ctrl, X0: np.ndarray, opts: OracleOptions, ladder, keep_witness):
    eng = _Engine(sys, cs, ctrl, opts, ladder)
    N = X0.shape[0]
    chunks = list(_chunks(N, max(1, opts.chunk)))
    threads = opts.threads or default_threads()

    def work(ix):
        return ix, eng.run(X0[ix], ix, keep_witness)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(ix) for ix in chunks]
    L = len(eng.ladder)
    out = _CellResults(np.zeros(N), np.zeros((N, L)), np.zeros(N, dtype=np.int64), [None] * N)
    for ix, r in parts:
        out.survival[ix] = r.survival
        out.min_sup[ix] = r.min_sup
        out.samples[ix] = r.samples
        for j, w in zip(ix, r.witness):
            out.witness[j] = w
    return eng, out


def _label(surv: float, min_sup: float, T: float, margin: float) -> VerdictLabel:
    if surv >= T - 1e-9:
        return VerdictLabel.ADMISSIBLE
    if min_sup >= margin:
        return VerdictLabel.INADMISSIBLE
    return VerdictLabel.UNKNOWN


def classify_admissible(sys: SystemModel, cs: ConstraintSet, ctrl: ControlSet, x0,
                        opts: Optional[OracleOptions] = None) -> AdmissibilityVerdict:
    """Admissible (with a witness), Inadmissible (evidence) or Unknown at horizon ``opts.T``."""
    opts = opts or OracleOptions()
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (sys.n,):
        raise DimensionError(f"state must have length {sys.n}")
    g0 = float(np.max(cs.values(x0)))
    if g0 >= cs.activation_tol:
        return AdmissibilityVerdict(VerdictLabel.INADMISSIBLE, g0, opts.T, 0)
    _, res = _run_cells(sys, cs, ctrl, x0[None, :], replace(opts, threads=1), [opts.T], True)
    surv, ms = float(res.survival[0]), float(res.min_sup[0, 0])
    label = _label(surv, ms, opts.T, opts.confident_margin)
    return AdmissibilityVerdict(label, ms, opts.T, int(res.samples[0]),
                                res.witness[0] if label is VerdictLabel.ADMISSIBLE else None,
                                min(surv, opts.T))


@dataclass(frozen=True)
class GridResult:
    axes: tuple  # per-axis cell-centre coordinates
    centers: np.ndarray  # (N, n), C order over the axes
    horizons: tuple
    labels: dict  # horizon -> array (N,) of VerdictLabel values (str)
    min_sup: dict  # horizon -> array (N,)
    survival: np.ndarray

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    def label_grid(self, T: Optional[float] = None) -> np.ndarray:
        T = self.horizons[-1] if T is None else T
        return np.asarray(self.labels[T]).reshape(self.shape)

    def admissible(self, T: Optional[float] = None) -> np.ndarray:
        return self.label_grid(T) == VerdictLabel.ADMISSIBLE.value


def grid_centers(box, resolution) -> tuple:
    box = [tuple(map(float, b)) for b in box]
    res = [int(r) for r in resolution]
    if len(box) != len(res):
        raise DimensionError("box and resolution must have the same length")
    axes = []
    for (lo, hi), r in zip(box, res):
        if r <= 0 or hi <= lo:
            axes.append(np.zeros(0))
        else:
            w = (hi - lo) / r
            axes.append(lo + w * (np.arange(r) + 0.5))
    if any(len(a) == 0 for a in axes):
        return tuple(axes), np.zeros((0, len(box)))
    mesh = np.meshgrid(*axes, indexing="ij")
    return tuple(axes), np.stack([m.ravel() for m in mesh], axis=1)


def grid_classify(sys: SystemModel, cs: ConstraintSet, ctrl: ControlSet, box, resolution,
                  opts: Optional[OracleOptions] = None, ladder: Optional[Sequence[float]] = None
                  ) -> GridResult:
    """Classify every cell centre of a regular grid.

    ``ladder`` lists horizons (default just ``opts.T``); one simulation at the
    largest horizon serves all of them, so labels are nested by construction.
    """
    opts = opts or OracleOptions()
    horizons = tuple(sorted(set(float(t) for t in (ladder or [opts.T]))))
    axes, centers = grid_centers(box, resolution)
    if len(centers) == 0:
        empty = {T: np.zeros(0, dtype=object) for T in horizons}
        return GridResult(axes, centers, horizons, empty, {T: np.zeros(0) for T in horizons},
                          np.zeros(0))
    if centers.shape[1] != sys.n:
        raise DimensionError(f"grid dimension {centers.shape[1]} does not match n={sys.n}")
    eng, res = _run_cells(sys, cs, ctrl, centers, opts, horizons, False)
    labels, sups = {}, {}
    for k, T in enumerate(horizons):
        lab = np.empty(len(centers), dtype=object)
        for i in range(len(centers)):
            lab[i] = _label(res.survival[i], res.min_sup[i, k], T, opts.confident_margin).value
        labels[T] = lab
        sups[T] = res.min_sup[:, k]
    return GridResult(axes, centers, horizons, labels, sups, res.survival)


# semipermeability -----------------------------------------------------------

@dataclass(frozen=True)
class ArcReport:
    arc_index: int
    endpoint: tuple
    points: int
    outward_violations: int
    inward_witnesses: int
    signals: int

    @property
    def inward_rate(self) -> float:
        return self.inward_witnesses / self.points if self.points else 1.0

    def as_dict(self) -> dict:
        return {"arc": self.arc_index, "endpoint": list(self.endpoint), "points": self.points,
                "outward_violations": self.outward_violations,
                "inward_witnesses": self.inward_witnesses, "inward_rate": self.inward_rate,
                "signals": self.signals}


@dataclass(frozen=True)
class SemipermeabilityReport:
    arcs: tuple
    delta: float
    horizon: float

    @property
    def outward_violations(self) -> int:
        return sum(a.outward_violations for a in self.arcs)

    @property
    def inward_rate(self) -> float:
        pts = sum(a.points for a in self.arcs)
        return sum(a.inward_witnesses for a in self.arcs) / pts if pts else 1.0

    def as_dict(self) -> dict:
        return {"delta": self.delta, "horizon": self.horizon,
                "outward_violations": self.outward_violations, "inward_rate": self.inward_rate,
                "arcs": [a.as_dict() for a in self.arcs]}


def arc_sample_points(x: np.ndarray, lam: np.ndarray, count: int):
    """``count`` nodes spread along an arc, excluding both ends."""
    N = len(x)
    if N < 3:
        return np.zeros((0, x.shape[1])), np.zeros((0, x.shape[1]))
    idx = np.unique(np.linspace(1, N - 2, count).round().astype(int))
    return x[idx], lam[idx]


def semipermeability_report(sys: SystemModel, cs: ConstraintSet, ctrl: ControlSet, boundary,
                            opts: Optional[OracleOptions] = None, points: int = 20,
                            delta: float = 1e-3, membership=None, enter_tol: float = 1e-6
                            ) -> SemipermeabilityReport:
    """Outward/inward displacement test along each arc of ``boundary``.

    An outward point (``xi + delta * n``, ``n`` the unit costate) counts as a
    violation when some sampled control keeps it in G over the horizon, or,
    when an exact ``membership`` margin function is supplied, when a sampled
    trajectory gets strictly inside the admissible set (margin above
    ``enter_tol``) before leaving G. Inward points should all admit witnesses.
    """
    if delta <= 0:
        raise ContractError("on-arc points (delta = 0) are excluded; delta must be positive")
    opts = opts or OracleOptions(n_signals=50)
    reports = []
    for a, arc in enumerate(boundary.arcs):
        xs, lams = arc_sample_points(arc.x, arc.lam, points)
        if len(xs) == 0:
            reports.append(ArcReport(a, tuple(arc.endpoint.z.tolist()), 0, 0, 0, 0))
            continue
        nrm = lams / np.linalg.norm(lams, axis=1, keepdims=True)
        out_pts = xs + delta * nrm
        in_pts = xs - delta * nrm
        _, r_out = _run_cells(sys, cs, ctrl, out_pts, opts, [opts.T], False)
        bad = r_out.survival >= opts.T - 1e-9
        if membership is not None:
            bad |= _enters_region(sys, cs, ctrl, out_pts, opts, membership, enter_tol)
        _, r_in = _run_cells(sys, cs, ctrl, in_pts, opts, [opts.T], False)
        good = r_in.survival >= opts.T - 1e-9
        reports.append(ArcReport(a, tuple(float(v) for v in arc.endpoint.z), len(xs),
                                 int(np.sum(bad)), int(np.sum(good)), int(opts.n_signals)))
    return SemipermeabilityReport(tuple(reports), delta, opts.T)


def _enters_region(sys, cs, ctrl, pts, opts: OracleOptions, membership, tol) -> np.ndarray:
    """For each point, whether some sampled trajectory gets inside ``membership`` while in G."""
    eng = _Engine(sys, cs, ctrl, opts, [opts.T])
    M = opts.n_signals
    consts = np.vstack([ctrl.vertices(), ctrl.center[None, :]])
    out = np.zeros(len(pts), dtype=bool)
    for i, p in enumerate(pts):
        sw, vals = _cell_schedule(ctrl, opts, i, opts.T, M)
        Kc = len(consts)
        sw = np.vstack([np.full((Kc, sw.shape[1]), _NEVER, dtype=np.int64), sw])
        cv = np.repeat(consts[:, None, :], sw.shape[1] + 1, axis=1)
        vals = np.concatenate([cv, vals])
        X = np.repeat(p[:, None], len(vals), axis=1)
        # a trajectory that starts outside G has already left it
        in_g = np.full(len(vals), _gmax(cs, p[:, None])[0] < cs.activation_tol)
        piece = np.zeros(len(vals), dtype=np.int64)
        sw = np.hstack([sw, np.full((len(sw), 1), _NEVER, dtype=np.int64)])
        rows = np.arange(len(vals))
        for s in range(eng.n_steps if in_g[0] else 0):
            piece += sw[rows, piece] <= s
            U = vals[rows, piece].T
            X = _rk4_batch(sys, X, U, opts.step)
            in_g &= _gmax(cs, X) < cs.activation_tol
            if not np.any(in_g):
                break
            if np.any(membership(X[:, in_g]) > tol):
                out[i] = True
                break
    return out
