"""CSV, SVG and config-file formats used by the command line tool."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .geometry import BoundingBox, Polygon, clipped_voronoi

FLOAT_FMT = "{:.17g}"


def _fmt(x) -> str:
    return FLOAT_FMT.format(float(x))


def write_matrix(path, header: Sequence[str], rows) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=float)) if len(rows) else np.zeros((0, len(header)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_matrix(path, prefix: Optional[str] = None):
    """``(header, array)`` of a numeric CSV file with one header line."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if prefix is not None and not all(h.strip().startswith(prefix) for h in header):
            raise ValueError(f"{path}: expected columns named {prefix}*, got {header}")
        rows = [[float(v) for v in r] for r in rd if r]
    arr = np.asarray(rows, dtype=float).reshape(-1, len(header))
    return header, arr


def write_samples(path, X) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    write_matrix(path, [f"param_{i}" for i in range(X.shape[1])], X)


def read_samples(path) -> np.ndarray:
    return read_matrix(path, prefix="param_")[1]


def write_images(path, Y) -> None:
    write_matrix(path, ["y0", "y1"], Y)


def read_images(path) -> np.ndarray:
    return read_matrix(path, prefix="y")[1]


def write_history(path, history: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "M", "H"])
        for h in history:
            w.writerow([int(h["round"]), int(h["M"]), _fmt(h["H"])])


def write_polygons(path, polygons: Sequence[Polygon]) -> None:
    """Boundary loops as ``loop,x,y`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["loop", "x", "y"])
        for k, p in enumerate(polygons):
            for x, y in p.vertices:
                w.writerow([k, _fmt(x), _fmt(y)])


# ---------------------------------------------------------------------------
# config files


def read_config(path) -> Dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def write_config(path, cfg: Dict[str, object]) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in cfg.items()))


# ---------------------------------------------------------------------------
# SVG


class _Canvas:
    """Maps a bounding box onto an SVG viewport with y pointing up."""

    def __init__(self, box: BoundingBox, width: float = 800.0):
        self.box = box
        self.scale = width / box.width
        self.w = width
        self.h = box.height * self.scale
        self.parts: List[str] = []

    def xy(self, P) -> np.ndarray:
        P = np.atleast_2d(P)
        return np.column_stack([(P[:, 0] - self.box.xmin) * self.scale, (self.box.ymax - P[:, 1]) * self.scale])

    def polygon(self, P, cls: str) -> None:
        pts = " ".join(f"{x:.3f},{y:.3f}" for x, y in self.xy(P))
        self.parts.append(f'<polygon class="{cls}" points="{pts}"/>')

    def squares(self, P, size: float, cls: str) -> None:
        for x, y in self.xy(P):
            self.parts.append(f'<rect class="{cls}" x="{x - size / 2:.3f}" y="{y - size / 2:.3f}" width="{size:.3f}" height="{size:.3f}"/>')

    def dots(self, P, r: float, cls: str) -> None:
        for x, y in self.xy(P):
            self.parts.append(f'<circle class="{cls}" cx="{x:.3f}" cy="{y:.3f}" r="{r:.3f}"/>')

    def render(self, style: str) -> str:
        body = "\n".join(self.parts)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w:.0f}" height="{self.h:.0f}" '
            f'viewBox="0 0 {self.w:.3f} {self.h:.3f}">\n<style>{style}</style>\n{body}\n</svg>\n'
        )


CELL_STYLE = (
    ".cell{fill:none;stroke:#1f4e9c;stroke-width:0.6}"
    ".generator{fill:#d62728}"
    ".centroid{fill:#111}"
)
BOUNDARY_STYLE = ".boundary{fill:#dde8f6;stroke:#1f4e9c;stroke-width:1.2}.sample{fill:#111}.flagged{fill:#d62728}"


def cells_svg(images, box: BoundingBox) -> str:
    """Clipped Voronoi cells, generators as squares and cell centroids as dots."""
    tess = clipped_voronoi(images, box)
    cv = _Canvas(box)
    size = max(2.0, min(6.0, 0.25 * cv.w / np.sqrt(len(tess))))
    for cell in tess.cells:
        cv.polygon(cell.vertices, "cell")
    cv.squares(tess.generators, size, "generator")
    cv.dots(tess.centroids, size / 3.0, "centroid")
    return cv.render(CELL_STYLE)


def boundary_svg(polygons: Sequence[Polygon], images, box: BoundingBox, flagged=()) -> str:
    cv = _Canvas(box)
    for p in polygons:
        cv.polygon(p.vertices, "boundary")
    images = np.atleast_2d(images)
    flagged = np.asarray(flagged, dtype=int)
    mask = np.ones(len(images), dtype=bool)
    mask[flagged] = False
    cv.dots(images[mask], 1.5, "sample")
    if len(flagged):
        cv.dots(images[flagged], 2.5, "flagged")
    return cv.render(BOUNDARY_STYLE)
