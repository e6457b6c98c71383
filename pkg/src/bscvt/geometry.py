"""Planar geometry: polygons, box-clipped Voronoi diagrams and Delaunay triangulations.

Two independent routes compute the clipped Voronoi diagram:

* :func:`clipped_voronoi` clips the bounding box against bisector half-planes,
  one cell at a time, and returns explicit :class:`Polygon` cells;
* :func:`voronoi_moments` reflects boundary generators across the box sides,
  triangulates once more and integrates every cell on the dual Delaunay
  graph in vectorised form.  This is the route used inside optimisation loops.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .exceptions import (
    DegenerateInputError,
    DegeneratePolygonError,
    DomainError,
    DuplicatePointError,
    InvalidPolygonError,
)

VERTEX_TOL = 1e-12
MEMBERSHIP_TOL = 1e-9
DUPLICATE_FACTOR = 1e-10
JITTER_FACTOR = 1e-9


class Polygon:
    """Closed polygon given by its vertex list (the last vertex is not repeated)."""

    __slots__ = ("vertices",)

    def __init__(self, vertices):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise InvalidPolygonError(f"vertices must have shape (n, 2), got {v.shape}")
        if len(v) < 3:
            raise InvalidPolygonError(f"a polygon needs at least 3 vertices, got {len(v)}")
        gaps = np.linalg.norm(v - np.roll(v, -1, axis=0), axis=1)
        if np.any(gaps <= VERTEX_TOL):
            raise InvalidPolygonError("consecutive vertices coincide")
        v.setflags(write=False)
        self.vertices = v

    def __len__(self):
        return len(self.vertices)

    def __repr__(self):
        return f"Polygon(n={len(self.vertices)}, area={signed_area(self):.6g})"

    @property
    def area(self) -> float:
        return abs(signed_area(self))

    def is_ccw(self) -> bool:
        return signed_area(self) > 0

    def is_convex(self, tol: float = 1e-12) -> bool:
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        cr = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        return bool(np.all(cr >= -tol) or np.all(cr <= tol))

    def is_simple(self) -> bool:
        """Brute-force check that no two non-adjacent edges intersect."""
        v = self.vertices
        n = len(v)
        for i in range(n):
            a, b = v[i], v[(i + 1) % n]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                if _segments_intersect(a, b, v[j], v[(j + 1) % n]):
                    return False
        return True

    def reversed(self) -> "Polygon":
        return Polygon(self.vertices[::-1])

    def oriented_ccw(self) -> "Polygon":
        return self if self.is_ccw() else self.reversed()


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_intersect(p1, p2, p3, p4, eps=1e-15):
    d1 = _cross(p3, p4, p1)
    d2 = _cross(p3, p4, p2)
    d3 = _cross(p1, p2, p3)
    d4 = _cross(p1, p2, p4)
    return (d1 * d2 < -eps) and (d3 * d4 < -eps)


@dataclass(frozen=True)
class BoundingBox:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.xmax, self.ymin, self.ymax)
        if not all(np.isfinite(vals)):
            raise ValueError(f"bounding box has non-finite bounds: {vals}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(f"empty bounding box: {vals}")

    @classmethod
    def from_points(cls, points, margin: float = 0.25) -> "BoundingBox":
        """Box around ``points`` whose half-widths are inflated by ``margin``."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        lo, hi = p.min(axis=0), p.max(axis=0)
        center = 0.5 * (lo + hi)
        half = np.maximum(0.5 * (hi - lo), 1e-6) * (1.0 + margin)
        return cls(center[0] - half[0], center[0] + half[0], center[1] - half[1], center[1] + half[1])

    @classmethod
    def parse(cls, text: str) -> "BoundingBox":
        parts = [float(t) for t in text.replace(" ", "").split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected 'xmin,xmax,ymin,ymax', got {text!r}")
        return cls(*parts)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.width, self.height))

    @property
    def center(self) -> np.ndarray:
        return np.array([0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax)])

    def as_tuple(self):
        return (self.xmin, self.xmax, self.ymin, self.ymax)

    def corners(self) -> np.ndarray:
        return np.array(
            [[self.xmin, self.ymin], [self.xmax, self.ymin], [self.xmax, self.ymax], [self.xmin, self.ymax]]
        )

    def as_polygon(self) -> Polygon:
        return Polygon(self.corners())

    def contains(self, points, strict: bool = True, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        x, y = p[:, 0], p[:, 1]
        if strict:
            return (x > self.xmin + tol) & (x < self.xmax - tol) & (y > self.ymin + tol) & (y < self.ymax - tol)
        return (x >= self.xmin - tol) & (x <= self.xmax + tol) & (y >= self.ymin - tol) & (y <= self.ymax + tol)

    def union(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(
            min(self.xmin, other.xmin), max(self.xmax, other.xmax),
            min(self.ymin, other.ymin), max(self.ymax, other.ymax),
        )

    def intersection(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(
            max(self.xmin, other.xmin), min(self.xmax, other.xmax),
            max(self.ymin, other.ymin), min(self.ymax, other.ymax),
        )


# ---------------------------------------------------------------------------
# polygon integrals


def _as_vertices(poly) -> np.ndarray:
    if isinstance(poly, Polygon):
        return poly.vertices
    v = np.asarray(poly, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise InvalidPolygonError("a polygon needs at least 3 vertices")
    return v


def signed_area(poly) -> float:
    """Shoelace area; positive for counterclockwise vertex order."""
    v = _as_vertices(poly)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def perimeter(poly) -> float:
    v = _as_vertices(poly)
    return float(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1).sum())


def centroid(poly) -> np.ndarray:
    v = _as_vertices(poly)
    a = signed_area(v)
    if abs(a) <= 1e-12:
        raise DegeneratePolygonError(f"polygon area {a:.3g} is too small for a centroid")
    # shift to the first vertex to limit cancellation
    o = v[0]
    w = v - o
    x, y = w[:, 0], w[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    cx = np.dot(x + xn, cr) / (6.0 * a)
    cy = np.dot(y + yn, cr) / (6.0 * a)
    return np.array([cx, cy]) + o


def second_moment(poly) -> float:
    """Polar moment ``∫(x² + y²) dA`` about the origin, by Green's theorem.

    The sign follows the orientation (positive for CCW).
    """
    v = _as_vertices(poly)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    ixx = np.dot(cr, y * y + y * yn + yn * yn) / 12.0
    iyy = np.dot(cr, x * x + x * xn + xn * xn) / 12.0
    return float(ixx + iyy)


def densify(poly, step: float) -> np.ndarray:
    """Points along the closed boundary of ``poly`` spaced at most ``step`` apart."""
    v = _as_vertices(poly)
    out = []
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        n = max(1, int(np.ceil(np.linalg.norm(b - a) / step)))
        t = np.arange(n)[:, None] / n
        out.append(a + t * (b - a))
    return np.vstack(out)


# ---------------------------------------------------------------------------
# Voronoi


@dataclass
class Tessellation:
    cells: list
    areas: np.ndarray
    centroids: np.ndarray
    generators: np.ndarray
    box: BoundingBox

    def __len__(self):
        return len(self.cells)


def separate_duplicates(points, box: BoundingBox, rng: Optional[np.random.Generator] = None):
    """Return a copy of ``points`` with near-coincident generators pulled apart.

    Points closer than ``1e-10·diam(box)`` receive a deterministic jitter of
    magnitude ``1e-9·diam(box)``.  The input is returned untouched (not copied)
    when nothing needs jittering.
    """
    p = np.asarray(points, dtype=float)
    if len(p) < 2:
        return p
    diam = box.diameter
    tol = DUPLICATE_FACTOR * diam
    pairs = cKDTree(p).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return p
    for _ in range(20):
        p = _jitter(p, np.unique(pairs.max(axis=1)), box, rng)
        pairs = cKDTree(p).query_pairs(tol, output_type="ndarray")
        if len(pairs) == 0:
            return p
    raise DuplicatePointError("could not separate duplicate generators")


def _jitter(p, movers, box: BoundingBox, rng=None) -> np.ndarray:
    if rng is None:
        rng = np.random.default_rng(0)
    diam = box.diameter
    tol = DUPLICATE_FACTOR * diam
    p = p.copy()
    theta = rng.uniform(0.0, 2.0 * np.pi, size=len(movers))
    p[movers] += JITTER_FACTOR * diam * np.column_stack([np.cos(theta), np.sin(theta)])
    p[:, 0] = np.clip(p[:, 0], box.xmin + tol, box.xmax - tol)
    p[:, 1] = np.clip(p[:, 1], box.ymin + tol, box.ymax - tol)
    return p


def _check_generators(points, box: BoundingBox) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) == 0:
        raise ValueError(f"generators must have shape (m, 2), got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise DomainError("non-finite generator")
    inside = box.contains(p, strict=True)
    if not np.all(inside):
        bad = np.flatnonzero(~inside)[:5]
        raise DomainError(f"generators {bad.tolist()} are not strictly inside {box.as_tuple()}")
    return p


def clip_halfplane(vertices: np.ndarray, normal, offset: float) -> np.ndarray:
    """Clip a convex polygon to ``{p : normal·p <= offset}`` (Sutherland–Hodgman)."""
    norm = float(np.hypot(normal[0], normal[1]))
    s = (vertices @ normal - offset) / norm
    scale = VERTEX_TOL
    if np.all(s <= scale):
        return vertices
    if np.all(s > -scale):
        return vertices[:0]
    out = []
    n = len(vertices)
    for i in range(n):
        a, b = vertices[i], vertices[(i + 1) % n]
        sa, sb = s[i], s[(i + 1) % n]
        if sa <= 0:
            out.append(a)
        if (sa < 0 < sb) or (sb < 0 < sa):
            t = sa / (sa - sb)
            out.append(a + t * (b - a))
    return np.array(out) if out else vertices[:0]


def _dedupe_ring(v: np.ndarray, tol: float = VERTEX_TOL) -> np.ndarray:
    if len(v) == 0:
        return v
    keep = np.linalg.norm(v - np.roll(v, 1, axis=0), axis=1) > tol
    return v[keep]


def _neighbor_lists(points: np.ndarray):
    """Voronoi neighbours via the Delaunay graph; ``None`` if it is degenerate."""
    m = len(points)
    if m < 3:
        return None
    try:
        tri = Delaunay(points)
    except QhullError:
        return None
    if len(tri.coplanar):
        return None
    indptr, indices = tri.vertex_neighbor_vertices
    return [indices[indptr[i]:indptr[i + 1]] for i in range(m)]


def clipped_voronoi(generators, box: BoundingBox, rng: Optional[np.random.Generator] = None) -> Tessellation:
    """Voronoi cells of ``generators`` restricted to ``box`` by half-plane clipping.

    Each cell starts as the box and is clipped by the perpendicular bisector
    against every Voronoi neighbour (the Delaunay neighbours; all other
    bisectors are redundant).  Degenerate configurations fall back to all
    ``m - 1`` bisectors.
    """
    p = separate_duplicates(_check_generators(generators, box), box, rng)
    m = len(p)
    neighbors = _neighbor_lists(p)
    corners = box.corners()
    cells, areas, cents = [], np.empty(m), np.empty((m, 2))
    for i in range(m):
        others = neighbors[i] if neighbors is not None else np.delete(np.arange(m), i)
        v = corners
        yi = p[i]
        for j in others:
            normal = p[j] - yi
            offset = 0.5 * (p[j] @ p[j] - yi @ yi)
            v = clip_halfplane(v, normal, offset)
            if len(v) == 0:
                break
        v = _dedupe_ring(v)
        if len(v) < 3:
            raise DuplicatePointError(f"cell {i} collapsed; generators too close")
        poly = Polygon(v).oriented_ccw()
        cells.append(poly)
        areas[i] = signed_area(poly)
        cents[i] = centroid(poly)
    return Tessellation(cells=cells, areas=areas, centroids=cents, generators=p, box=box)


@dataclass
class VoronoiMoments:
    """Per-cell integrals of a box-clipped Voronoi diagram."""

    areas: np.ndarray
    centroids: np.ndarray
    energies: np.ndarray  # ∫_{V_i} |x - y_i|² dx
    generators: np.ndarray

    @property
    def energy(self) -> float:
        return float(self.energies.sum())


def circumcenters(P: np.ndarray) -> np.ndarray:
    """Circumcentres of triangles given as an array of shape (k, 3, 2).

    Flat triangles give non-finite rows.
    """
    a = P[:, 0]
    b = P[:, 1] - a
    c = P[:, 2] - a
    d = 2.0 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    bb = np.einsum("ij,ij->i", b, b)
    cc = np.einsum("ij,ij->i", c, c)
    with np.errstate(divide="ignore", invalid="ignore"):
        ux = (c[:, 1] * bb - b[:, 1] * cc) / d
        uy = (b[:, 0] * cc - c[:, 0] * bb) / d
    return a + np.column_stack([ux, uy])


def _oriented_delaunay(pts: np.ndarray):
    tri = Delaunay(pts)
    simp = tri.simplices
    nb = tri.neighbors
    cw = _tri_cross(pts[simp]) < 0
    if cw.any():
        simp = simp.copy()
        nb = nb.copy()
        simp[cw] = simp[cw][:, [0, 2, 1]]
        nb[cw] = nb[cw][:, [0, 2, 1]]
    return tri, simp, nb


class _CoplanarPoints(Exception):
    def __init__(self, idx):
        self.idx = idx


def _crossing_cells(p: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Generators whose unclipped Voronoi cell is unbounded or leaves ``box``."""
    tri, simp, _ = _oriented_delaunay(p)
    if len(tri.coplanar):
        raise _CoplanarPoints(np.unique(tri.coplanar[:, 0]))
    cc = circumcenters(p[simp])
    outside = ~box.contains(cc, strict=False)
    crossing = np.zeros(len(p), dtype=bool)
    crossing[simp[outside].ravel()] = True
    crossing[tri.convex_hull.ravel()] = True
    return crossing


def voronoi_moments(points, box: BoundingBox, rng: Optional[np.random.Generator] = None) -> VoronoiMoments:
    """Areas, centroids and quadratic energies of the box-clipped Voronoi cells.

    Generators whose cells leave the box are reflected across the four sides;
    a reflection cuts its own cell exactly along that side and cannot touch any
    cell inside the box.  Cells are then integrated edge by edge on the dual
    Delaunay triangulation: every Voronoi edge closes a fan triangle with its
    generator, and the integrals over each fan triangle are exact closed forms.
    """
    p = separate_duplicates(_check_generators(points, box), box, rng)
    m = len(p)
    if m < 4:
        return _moments_from_cells(clipped_voronoi(p, box))
    for _ in range(5):
        # Qhull drops points it cannot separate from a neighbour; jitter them
        try:
            crossing = _crossing_cells(p, box)
            break
        except _CoplanarPoints as exc:
            p = _jitter(p, exc.idx, box, rng)
        except QhullError:
            return _moments_from_cells(clipped_voronoi(p, box))
    else:
        raise DuplicatePointError("Qhull keeps merging generators")
    try:
        q = p[crossing]
        x, y = q[:, 0], q[:, 1]
        pts = np.vstack(
            [
                p,
                np.column_stack([2.0 * box.xmin - x, y]),
                np.column_stack([2.0 * box.xmax - x, y]),
                np.column_stack([x, 2.0 * box.ymin - y]),
                np.column_stack([x, 2.0 * box.ymax - y]),
            ]
        )
        tri, simp, nb = _oriented_delaunay(pts)
    except QhullError:
        return _moments_from_cells(clipped_voronoi(p, box))
    cc = circumcenters(pts[simp])
    if not np.all(np.isfinite(cc)):
        return _moments_from_cells(clipped_voronoi(p, box))
    # half-edge v_k -> v_{k+1} of triangle t: cell v_k gains the Voronoi edge
    # from the circumcentre across that edge to the circumcentre of t
    origin = simp.ravel()
    across = nb[:, [2, 0, 1]].ravel()
    tri_id = np.repeat(np.arange(len(simp)), 3)
    use = origin < m
    if np.any(across[use] < 0):
        return _moments_from_cells(clipped_voronoi(p, box))
    origin, across, tri_id = origin[use], across[use], tri_id[use]
    a = cc[across] - p[origin]
    b = cc[tri_id] - p[origin]
    tri_area = 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    areas = np.bincount(origin, tri_area, minlength=m)
    mx = np.bincount(origin, tri_area * (a[:, 0] + b[:, 0]), minlength=m) / 3.0
    my = np.bincount(origin, tri_area * (a[:, 1] + b[:, 1]), minlength=m) / 3.0
    quad = np.einsum("ij,ij->i", a, a) + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, b)
    energies = np.bincount(origin, tri_area * quad, minlength=m) / 6.0
    if not np.all(areas > 0):
        # a generator Qhull dropped from the reflected set has no fan
        return _moments_from_cells(clipped_voronoi(p, box))
    cents = p + np.column_stack([mx, my]) / areas[:, None]
    return VoronoiMoments(areas=areas, centroids=cents, energies=energies, generators=p)


def cell_energy(poly, generator) -> float:
    """``∫_poly |x - generator|² dx`` for a polygon (exact)."""
    v = _as_vertices(poly) - np.asarray(generator, dtype=float)
    return abs(second_moment(v))


def _moments_from_cells(tess: Tessellation) -> VoronoiMoments:
    energies = np.array([cell_energy(c, g) for c, g in zip(tess.cells, tess.generators)])
    return VoronoiMoments(areas=tess.areas, centroids=tess.centroids, energies=energies, generators=tess.generators)


# ---------------------------------------------------------------------------
# Delaunay


@dataclass
class Triangulation:
    points: np.ndarray
    triangles: np.ndarray  # (k, 3) CCW vertex indices
    neighbors: np.ndarray  # (k, 3) triangle opposite each vertex, -1 on the hull

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges()
        return np.linalg.norm(self.points[e[:, 0]] - self.points[e[:, 1]], axis=1)

    def angles(self) -> np.ndarray:
        """Interior angles in degrees, column ``k`` at vertex ``k``."""
        return triangle_angles(self.points[self.triangles])

    def area(self) -> float:
        P = self.points[self.triangles]
        return float(0.5 * np.sum(_tri_cross(P)))


def _tri_cross(P):
    a, b, c = P[:, 0], P[:, 1], P[:, 2]
    return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])


def triangle_angles(P: np.ndarray) -> np.ndarray:
    out = np.empty(P.shape[:2])
    for k in range(3):
        u = P[:, (k + 1) % 3] - P[:, k]
        w = P[:, (k + 2) % 3] - P[:, k]
        cosv = np.einsum("ij,ij->i", u, w) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
        out[:, k] = np.degrees(np.arccos(np.clip(cosv, -1.0, 1.0)))
    return out


def delaunay(points: Sequence) -> Triangulation:
    """Delaunay triangulation (Qhull) with every triangle in CCW order.

    Cocircular ties are resolved by Qhull's deterministic triangulation of
    non-simplicial facets, so equal inputs give equal outputs.
    """
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) < 3:
        raise DegenerateInputError("Delaunay needs at least 3 planar points")
    try:
        tri = Delaunay(p)
    except QhullError as exc:
        raise DegenerateInputError("points are collinear or otherwise degenerate") from exc
    simp = tri.simplices.copy()
    nb = tri.neighbors.copy()
    cw = _tri_cross(p[simp]) < 0
    simp[cw] = simp[cw][:, [0, 2, 1]]
    nb[cw] = nb[cw][:, [0, 2, 1]]
    return Triangulation(points=p, triangles=simp, neighbors=nb)


def in_circumcircle(a, b, c, d) -> float:
    """Positive when ``d`` lies strictly inside the circumcircle of CCW ``abc``."""
    m = np.array(
        [
            [a[0] - d[0], a[1] - d[1], (a[0] - d[0]) ** 2 + (a[1] - d[1]) ** 2],
            [b[0] - d[0], b[1] - d[1], (b[0] - d[0]) ** 2 + (b[1] - d[1]) ** 2],
            [c[0] - d[0], c[1] - d[1], (c[0] - d[0]) ** 2 + (c[1] - d[1]) ** 2],
        ]
    )
    return float(np.linalg.det(m))
