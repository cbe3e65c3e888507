"""Writers and readers for arcs, boundaries, grids and run manifests.

All writers are deterministic: floats are written with ``repr`` precision and
nothing time-dependent goes into any file, so identical runs produce
byte-identical outputs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .barrier import AdmissibleBoundary, BarrierArc, hamiltonian_values
from .errors import ConfigError
from .model import SystemModel
from .oracle import GridResult, VerdictLabel
from .tangency import TangencyPoint

TOOL_VERSION = "0.1.0"


def _num(v: float) -> str:
    return repr(float(v))


# arcs -----------------------------------------------------------------------

def arc_header(n: int, m: int) -> list:
    return (["t"] + [f"x_{k + 1}" for k in range(n)] + [f"lambda_{k + 1}" for k in range(n)]
            + [f"u_{k + 1}" for k in range(m)] + ["H_residual"])


def arc_csv(sys: SystemModel, arc: BarrierArc) -> str:
    """One row per stored node; ``H_residual`` is ``lambda . f(x, u)`` at that node."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(arc_header(sys.n, sys.m))
    H = hamiltonian_values(sys, arc)
    for t, x, lam, u, h in zip(arc.times, arc.x, arc.lam, arc.controls, H):
        w.writerow([_num(t)] + [_num(v) for v in x] + [_num(v) for v in lam]
                   + [_num(v) for v in u] + [_num(h)])
    return buf.getvalue()


def _arc_dict(sys: SystemModel, arc: BarrierArc) -> dict:
    n, m = sys.n, sys.m
    return {
        "endpoint": arc.endpoint.as_dict(),
        "termination": arc.termination.value,
        "t_bar": float(arc.t_bar),
        "switch_times": [float(s) for s in arc.switch_times],
        "note": arc.note,
        "trimmed_at": None if arc.trimmed_at is None else [float(v) for v in arc.trimmed_at],
        "t": [float(v) for v in arc.times],
        **{f"x_{k + 1}": [float(v) for v in arc.x[:, k]] for k in range(n)},
        **{f"lambda_{k + 1}": [float(v) for v in arc.lam[:, k]] for k in range(n)},
        **{f"u_{k + 1}": [float(v) for v in arc.controls[:, k]] for k in range(m)},
        "H_residual": [float(v) for v in hamiltonian_values(sys, arc)],
    }


def boundary_dict(sys: SystemModel, boundary: AdmissibleBoundary) -> dict:
    return {
        "n": sys.n,
        "m": sys.m,
        "arcs": [_arc_dict(sys, a) for a in boundary.arcs],
        "usable_segments": [
            {"face": int(face) + 1, "i": int(face),
             **{f"x_{k + 1}": [float(v) for v in pts[:, k]] for k in range(sys.n)}}
            for face, pts in boundary.usable_segments],
        "corners": [{f"x_{k + 1}": float(c[k]) for k in range(sys.n)} for c in boundary.corners],
        "notes": list(boundary.notes),
    }


def dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


@dataclass(frozen=True)
class StoredArc:
    """An arc read back from a boundary document (enough for verification)."""

    times: np.ndarray
    x: np.ndarray
    lam: np.ndarray
    controls: np.ndarray
    endpoint: TangencyPoint
    termination: str = ""
    switch_times: tuple = ()


@dataclass(frozen=True)
class StoredBoundary:
    arcs: tuple
    usable_segments: tuple
    corners: tuple
    notes: tuple = field(default_factory=tuple)


def load_boundary(source) -> StoredBoundary:
    """Parse a boundary JSON document (path, text or dict)."""
    if isinstance(source, dict):
        doc = source
    else:
        text = Path(source).read_text() if not str(source).lstrip().startswith("{") else source
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(exc), "boundary") from None
    try:
        n, m = int(doc["n"]), int(doc["m"])
        arcs = []
        for j, a in enumerate(doc["arcs"]):
            x = np.array([a[f"x_{k + 1}"] for k in range(n)], dtype=float).T
            lam = np.array([a[f"lambda_{k + 1}"] for k in range(n)], dtype=float).T
            u = np.array([a[f"u_{k + 1}"] for k in range(m)], dtype=float).T
            arcs.append(StoredArc(np.array(a["t"], dtype=float), x.reshape(-1, n),
                                  lam.reshape(-1, n), u.reshape(-1, m),
                                  TangencyPoint.from_dict(a["endpoint"]), a.get("termination", ""),
                                  tuple(a.get("switch_times", ()))))
        segs = tuple((int(s["i"]), np.array([s[f"x_{k + 1}"] for k in range(n)], dtype=float).T)
                     for s in doc.get("usable_segments", ()))
        corners = tuple(np.array([c[f"x_{k + 1}"] for k in range(n)], dtype=float)
                        for c in doc.get("corners", ()))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed boundary document ({exc})", "boundary") from None
    return StoredBoundary(tuple(arcs), segs, corners, tuple(doc.get("notes", ())))


# gnuplot / svg ---------------------------------------------------------------

def gnuplot_data(boundary) -> str:
    """Blocks separated by two blank lines: one per arc, then one per usable segment."""
    out = []
    for j, arc in enumerate(boundary.arcs):
        out.append(f"# arc {j} endpoint {' '.join(_num(v) for v in arc.endpoint.z)}")
        out.extend(" ".join(_num(v) for v in row) for row in arc.x)
        out.append("\n")
    for face, pts in boundary.usable_segments:
        out.append(f"# usable face {int(face) + 1}")
        out.extend(" ".join(_num(v) for v in row) for row in pts)
        out.append("\n")
    return "\n".join(out)


def _svg_points(pts, tx, ty) -> str:
    return " ".join(f"{tx(p[0]):.3f},{ty(p[1]):.3f}" for p in pts)


def svg_document(boundary, box, width: int = 640, height: int = 480) -> str:
    """Static picture: constraint box, barrier arcs (blue), usable parts (green)."""
    (x0, x1), (y0, y1) = box[0], box[1]
    pad = 20.0

    def tx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def ty(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
             'fill="none" stroke="#888" stroke-dasharray="4 2"/>']
    for face, pts in boundary.usable_segments:
        if len(pts) > 1:
            parts.append(f'<polyline fill="none" stroke="#2a2" stroke-width="3" '
                         f'points="{_svg_points(pts, tx, ty)}"/>')
    for arc in boundary.arcs:
        pts = arc.x[:: max(1, len(arc.x) // 2000)]
        parts.append(f'<polyline fill="none" stroke="#22c" stroke-width="1.5" '
                     f'points="{_svg_points(pts, tx, ty)}"/>')
    for c in boundary.corners:
        parts.append(f'<circle cx="{tx(c[0]):.3f}" cy="{ty(c[1]):.3f}" r="3" fill="#c22"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# grids -------------------------------------------------------------------------

def grid_csv(grid: GridResult, T: Optional[float] = None) -> str:
    T = grid.horizons[-1] if T is None else T
    n = grid.centers.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{k + 1}" for k in range(n)] + ["label", "min_sup_estimate"])
    for c, lab, ms in zip(grid.centers, grid.labels[T], grid.min_sup[T]):
        w.writerow([_num(v) for v in c] + [lab, _num(ms)])
    return buf.getvalue()


_GREY = {VerdictLabel.ADMISSIBLE.value: 255, VerdictLabel.UNKNOWN.value: 128,
         VerdictLabel.INADMISSIBLE.value: 0}


def grid_pgm(grid: GridResult, T: Optional[float] = None) -> str:
    """Plain P2 raster of a planar grid; x1 runs right, x2 runs up."""
    if len(grid.axes) != 2:
        raise ValueError("PGM output needs a two-dimensional grid")
    nx, ny = grid.shape
    lab = grid.label_grid(T)
    lines = ["P2", f"{nx} {ny}", "255"]
    for j in reversed(range(ny)):
        lines.append(" ".join(str(_GREY[lab[i, j]]) for i in range(nx)))
    return "\n".join(lines) + "\n"


# manifests -------------------------------------------------------------------

def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    command: str
    config_hash: str
    options: dict
    tool_version: str = TOOL_VERSION
    seed: int = 0
    outputs: tuple = ()

    def as_dict(self) -> dict:
        return {"command": self.command, "config_hash": self.config_hash,
                "options": self.options, "tool_version": self.tool_version, "seed": self.seed,
                "outputs": list(self.outputs)}


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def write_outputs(out_dir, files: Sequence[tuple], manifest: RunManifest) -> list:
    """Write ``(name, text)`` pairs plus ``manifest.json`` listing them."""
    out = Path(out_dir)
    written = [write_text(out / name, text) for name, text in files]
    man = RunManifest(manifest.command, manifest.config_hash, manifest.options,
                      manifest.tool_version, manifest.seed, tuple(name for name, _ in files))
    written.append(write_text(out / "manifest.json", dumps(man.as_dict())))
    return written
