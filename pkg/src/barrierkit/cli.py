"""Command-line front end.

Exit codes: 0 ok, 2 usage or config error, 3 empty result, 4 partial result
(some arc stopped on Hamiltonian drift), 5 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import export
from .barrier import (ArcTermination, BarrierOptions, assemble_boundary, barrier_arcs,
                      hamiltonian_residual)
from .errors import BarrierKitError, ConfigError
from .expr.config import load_system_config
from .fixtures import FIXTURES, get_fixture
from .model import ConstraintSet, ControlSet, SystemModel
from .ode import IntegratorOptions
from .oracle import (OracleOptions, VerdictLabel, classify_admissible, default_threads,
                     grid_classify, semipermeability_report)
from .tangency import FaceSearchOptions, find_tangency_points

EXIT_OK, EXIT_USAGE, EXIT_EMPTY, EXIT_PARTIAL, EXIT_VERIFY = 0, 2, 3, 4, 5


@dataclass
class Problem:
    name: str
    system: SystemModel
    constraints: ConstraintSet
    control: ControlSet
    search_box: tuple
    grid_box: tuple
    config_text: str
    params: dict
    membership: Optional[Callable] = None


class UsageError(Exception):
    pass


# argument parsing helpers ------------------------------------------------------

def parse_bbox(text: str) -> tuple:
    """``lo:hi,lo:hi,...`` into ``((lo, hi), ...)``."""
    out = []
    for part in text.split(","):
        bits = part.split(":")
        if len(bits) != 2:
            raise UsageError(f"bad bbox component {part!r}; expected lo:hi")
        lo, hi = (float(b) for b in bits)
        if not hi > lo:
            raise UsageError(f"bbox component {part!r} must have hi > lo")
        out.append((lo, hi))
    return tuple(out)


def parse_grid(text: str) -> tuple:
    """``lo:hi:count,...`` into a box and a resolution."""
    box, res = [], []
    for part in text.split(","):
        bits = part.split(":")
        if len(bits) != 3:
            raise UsageError(f"bad grid component {part!r}; expected lo:hi:count")
        box.append((float(bits[0]), float(bits[1])))
        res.append(int(bits[2]))
    return tuple(box), tuple(res)


def parse_point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError:
        raise UsageError(f"bad point {text!r}; expected comma-separated numbers") from None


def _parse_sets(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"bad --set {item!r}; expected name=value")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"--set {k}: value {v!r} is not a number") from None
    return out


def load_problem(args) -> Problem:
    overrides = _parse_sets(getattr(args, "set", None))
    if args.fixture:
        if args.fixture not in FIXTURES:
            raise UsageError(f"unknown fixture {args.fixture!r}; available: {', '.join(FIXTURES)}")
        try:
            fx = get_fixture(args.fixture, **overrides)
        except TypeError as exc:
            raise UsageError(f"bad fixture parameter: {exc}") from None
        return Problem(fx.name, fx.system, fx.constraints, fx.control, fx.search_box,
                       fx.grid_box, fx.config_text, dict(fx.params), fx.membership)
    path = Path(args.config)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", "config") from None
    if overrides:
        raise UsageError("--set only applies to built-in fixtures")
    sysm, cs, ctrl = load_system_config(path)
    box = tuple((-5.0, 5.0) for _ in range(sysm.n))
    return Problem(sysm.name or path.stem, sysm, cs, ctrl, box, box, text, {})


def integrator_options(args) -> IntegratorOptions:
    kw = {"scheme": args.scheme}
    if args.step is not None:
        kw["step"] = args.step
    return IntegratorOptions(**kw)


def oracle_options(args, n_signals_default: int = 200) -> OracleOptions:
    kw = dict(seed=args.seed, n_signals=n_signals_default if args.signals is None else args.signals)
    if args.horizon is not None:
        kw["T"] = args.horizon
    return OracleOptions(**kw)


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def manifest(command: str, problem: Problem, options: dict, seed: int = 0) -> export.RunManifest:
    opts = {"problem": problem.name, "params": problem.params, **options}
    return export.RunManifest(command, export.content_hash(problem.config_text),
                              _jsonable(opts), seed=seed)


def _tangency_points(problem: Problem, box, face: Optional[int]):
    search = FaceSearchOptions.from_box(box)
    faces = range(problem.constraints.p) if face is None else [face]
    pts = []
    for i in faces:
        pts.extend(find_tangency_points(problem.system, problem.constraints, problem.control,
                                        i, search))
    return pts


def _face_arg(args, problem: Problem) -> Optional[int]:
    if args.face is None:
        return None
    if not 1 <= args.face <= problem.constraints.p:
        raise UsageError(f"--face must be between 1 and {problem.constraints.p}")
    return args.face - 1


# commands -------------------------------------------------------------------------

def cmd_tangency(args) -> int:
    problem = load_problem(args)
    face = _face_arg(args, problem)
    box = parse_bbox(args.bbox) if args.bbox else problem.search_box
    pts = _tangency_points(problem, box, face)
    doc = {"tangency_points": [p.as_dict() for p in pts]}
    text = export.dumps(doc)
    if args.out:
        man = manifest("tangency", problem, {"face": args.face, "bbox": box})
        export.write_outputs(args.out, [("tangency.json", text)], man)
    else:
        sys.stdout.write(text)
    if not pts:
        print("no tangency points found", file=sys.stderr)
        return EXIT_EMPTY
    return EXIT_OK


def _containment_summary(problem: Problem, args) -> Optional[str]:
    """Compare a nonlinear spring with the linear one on a coarse grid."""
    if not problem.name.startswith("nonlinear_spring"):
        return None
    lin = get_fixture("linear_spring", **_parse_sets(args.set))
    opts = oracle_options(args, n_signals_default=50)
    res = (24, 24)
    a = grid_classify(problem.system, problem.constraints, problem.control, problem.grid_box,
                      res, opts).admissible()
    b = grid_classify(lin.system, lin.constraints, lin.control, problem.grid_box, res,
                      opts).admissible()
    extra = int(np.sum(a & ~b))
    return (f"containment vs linear_spring on {res[0]}x{res[1]} grid: "
            f"{int(a.sum())} admissible cells vs {int(b.sum())}; "
            f"{extra} cells admissible only for {problem.name}; "
            f"{int(np.sum(b & ~a))} only for linear_spring")


def cmd_barrier(args) -> int:
    problem = load_problem(args)
    face = _face_arg(args, problem)
    box = parse_bbox(args.bbox) if args.bbox else problem.search_box
    pts = _tangency_points(problem, box, face)
    if not pts:
        print("no tangency points found", file=sys.stderr)
        return EXIT_EMPTY
    bopts = BarrierOptions(integrator=integrator_options(args))
    if args.horizon is not None:
        bopts = dataclasses.replace(bopts, t_max=args.horizon)
    S = (problem.system, problem.constraints, problem.control)
    arcs = barrier_arcs(*S, pts, bopts, threads=default_threads())
    boundary = assemble_boundary(*S, arcs, box=box)
    for j, arc in enumerate(boundary.arcs):
        z = ", ".join(f"{v:.6g}" for v in arc.endpoint.z)
        print(f"arc {j}: endpoint ({z}) face {arc.endpoint.i_star + 1} "
              f"{arc.termination.value} nodes={len(arc)} "
              f"max|H|={hamiltonian_residual(problem.system, arc):.3e}")
    for c in boundary.corners:
        print("corner (" + ", ".join(f"{v:.6g}" for v in c) + ")")
    files = []
    fmt = args.format
    if fmt in (None, "csv"):
        files += [(f"arc_{j}.csv", export.arc_csv(problem.system, a))
                  for j, a in enumerate(boundary.arcs)]
    if fmt in (None, "json"):
        files.append(("boundary.json", export.dumps(export.boundary_dict(problem.system, boundary))))
    if fmt in (None, "gnuplot"):
        files.append(("barrier.dat", export.gnuplot_data(boundary)))
    if fmt in (None, "svg") and problem.system.n == 2:
        files.append(("barrier.svg", export.svg_document(boundary, box)))
    man = manifest("barrier", problem, {"face": args.face, "bbox": box, "barrier": bopts},
                   seed=args.seed)
    export.write_outputs(args.out, files, man)
    summary = _containment_summary(problem, args)
    if summary:
        print(summary)
    if any(a.termination is ArcTermination.HAMILTONIAN_DRIFT for a in boundary.arcs):
        print("some arcs stopped on Hamiltonian drift", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_classify(args) -> int:
    problem = load_problem(args)
    opts = oracle_options(args)
    S = (problem.system, problem.constraints, problem.control)
    if args.point:
        x = parse_point(args.point)
        if x.shape != (problem.system.n,):
            raise UsageError(f"point must have {problem.system.n} coordinates")
        box = parse_bbox(args.bbox) if args.bbox else problem.grid_box
        if any(not lo <= v <= hi for v, (lo, hi) in zip(x, box)):
            print(f"warning: point {args.point} lies outside the box {box}", file=sys.stderr)
        verdict = classify_admissible(*S, x, opts)
        text = export.dumps({"point": x.tolist(), **verdict.as_dict()})
        if args.out:
            export.write_outputs(args.out, [("verdict.json", text)],
                                 manifest("classify", problem, {"point": x, "oracle": opts}, args.seed))
        else:
            sys.stdout.write(text)
        return EXIT_OK
    if not args.grid:
        raise UsageError("classify needs --point or --grid")
    box, res = parse_grid(args.grid)
    ladder = [float(v) for v in args.ladder.split(",")] if args.ladder else None
    grid = grid_classify(*S, box, res, opts, ladder)
    if len(grid.centers) == 0:
        print("empty grid", file=sys.stderr)
        return EXIT_EMPTY
    files = [("grid.csv", export.grid_csv(grid))]
    if len(res) == 2 and args.format in (None, "pgm"):
        files.append(("grid.pgm", export.grid_pgm(grid)))
    export.write_outputs(args.out or "classify_out", files, manifest("classify", problem,
                                                   {"grid": args.grid, "ladder": ladder,
                                                    "oracle": opts}, args.seed))
    for T in grid.horizons:
        labels, counts = np.unique(grid.labels[T], return_counts=True)
        print(f"T={T:g}: " + ", ".join(f"{l}={c}" for l, c in zip(labels, counts)))
    if len(res) == 2:
        from scipy import ndimage
        _, ncomp = ndimage.label(grid.admissible())
        print(f"admissible components (4-connected): {ncomp}")
    return EXIT_OK


def cmd_verify(args) -> int:
    problem = load_problem(args)
    path = Path(args.boundary) if args.boundary else Path(args.out) / "boundary.json"
    if not path.is_file():
        print(f"missing boundary artifact {path}", file=sys.stderr)
        return EXIT_USAGE
    boundary = export.load_boundary(path)
    S = (problem.system, problem.constraints, problem.control)
    opts = oracle_options(args, n_signals_default=50)
    margin = getattr(problem.membership, "margin", None)
    rep = semipermeability_report(*S, boundary, opts, membership=margin)
    doc = {"semipermeability": rep.as_dict()}
    agreement = None
    if problem.membership is not None and problem.system.n == 2:
        box, res = parse_grid(args.grid) if args.grid else (problem.grid_box, (40, 40))
        grid = grid_classify(*S, box, res, dataclasses.replace(opts, n_signals=200))
        truth = problem.membership(grid.centers.T)
        keep = problem.membership.distance(grid.centers) >= args.band
        adm = grid.labels[grid.horizons[-1]] == VerdictLabel.ADMISSIBLE.value
        agreement = float(np.mean(adm[keep] == truth[keep])) if np.any(keep) else 1.0
        doc["agreement"] = {"value": agreement, "cells": int(np.sum(keep)),
                            "band": args.band, "threshold": args.threshold}
    export.write_outputs(args.out, [("verify.json", export.dumps(doc))],
                         manifest("verify", problem, {"boundary": str(path), "oracle": opts,
                                                      "threshold": args.threshold}, args.seed))
    print(f"outward violations: {rep.outward_violations}; inward witness rate: "
          f"{rep.inward_rate:.3f}")
    if agreement is not None:
        print(f"grid agreement: {agreement:.4f} (threshold {args.threshold:g})")
    ok = rep.outward_violations == 0 and (agreement is None or agreement >= args.threshold)
    return EXIT_OK if ok else EXIT_VERIFY


# entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group(required=True)
    src.add_argument("--fixture", help=f"built-in system: {', '.join(FIXTURES)}")
    src.add_argument("--config", help="TOML or JSON system definition")
    common.add_argument("--set", action="append", metavar="NAME=VALUE",
                        help="override a fixture parameter (repeatable)")
    common.add_argument("--face", type=int, help="constraint face, 1-based")
    common.add_argument("--bbox", help="search box lo:hi,lo:hi,...")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--horizon", type=float)
    common.add_argument("--signals", type=int)
    common.add_argument("--scheme", choices=("rk4", "rkf45"), default="rk4")
    common.add_argument("--step", type=float)
    common.add_argument("--out")
    common.add_argument("--format", choices=("csv", "json", "gnuplot", "svg", "pgm"))

    p = argparse.ArgumentParser(prog="barrierkit",
                                description="Barriers of constrained control systems")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("tangency", parents=[common], help="find tangency points")
    b = sub.add_parser("barrier", parents=[common], help="integrate barrier arcs")
    b.set_defaults(out_default="barrier_out")
    c = sub.add_parser("classify", parents=[common], help="oracle classification")
    c.add_argument("--point")
    c.add_argument("--grid", help="lo:hi:count,... cell grid")
    c.add_argument("--ladder", help="comma-separated horizons, e.g. 5,10,20")
    v = sub.add_parser("verify", parents=[common], help="check a computed boundary")
    v.add_argument("--boundary", help="boundary JSON (default OUT/boundary.json)")
    v.add_argument("--grid", help="agreement grid lo:hi:count,...")
    v.add_argument("--threshold", type=float, default=0.95)
    v.add_argument("--band", type=float, default=0.0,
                   help="ignore grid cells closer than this to the exact boundary")
    v.set_defaults(out_default="barrier_out")
    return p


COMMANDS = {"tangency": cmd_tangency, "barrier": cmd_barrier, "classify": cmd_classify,
            "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors this way
        return int(exc.code or 0)
    if args.out is None and hasattr(args, "out_default"):
        args.out = args.out_default
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except (UsageError, BarrierKitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
