"""Multigrid driver, refinement, region restriction and boundary extraction."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import directed_hausdorff, pdist
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.geometry.polygon import orient
from shapely.ops import unary_union

from .cvt import SampleSet, energy_report, lloyd_bs, variational_cvt_bs
from .exceptions import DegenerateInputError, ExtractionError, InfeasibleRegionError
from .geometry import BoundingBox, Polygon, delaunay, densify
from .maps import DiagramMap
from .optim import (
    RECENTER_PENALTIES,
    OptimOptions,
    Status,
    default_inverse_options,
    inverse_sample_batch,
    recenter_batch,
)

logger = logging.getLogger(__name__)

REFINE_METHODS = ("spheres", "delaunay")


@dataclass
class RefineConfig:
    """Settings of the multigrid loop.

    ``q1`` caps the Lloyd iterations and ``q2`` the variational iterations of
    every round.  Values outside the customary ranges ([20, 100] and
    [1000, 2000]) are accepted but logged.
    """

    n_ref: int = 3
    n_add: int = 4
    method: str = "spheres"
    q1: int = 50
    q2: int = 1500
    sv_threshold: float = 1e-3
    eps: float = 1e-4
    recenter: bool = True

    def __post_init__(self):
        if self.method not in REFINE_METHODS:
            raise ValueError(f"method must be one of {REFINE_METHODS}, got {self.method!r}")
        for name in ("n_ref", "q1", "q2"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_add < 1:
            raise ValueError("n_add must be >= 1")
        if self.sv_threshold < 0 or self.eps <= 0:
            raise ValueError("sv_threshold must be >= 0 and eps > 0")
        if not 20 <= self.q1 <= 100 or not 1000 <= self.q2 <= 2000:
            logger.info("q1=%d, q2=%d outside the customary ranges", self.q1, self.q2)


@dataclass(frozen=True)
class RegionRestriction:
    """Keep every image inside the closed disk ``B(center, radius)``."""

    center: tuple
    radius: float

    def __post_init__(self):
        c = tuple(float(v) for v in np.ravel(self.center))
        if len(c) != 2 or not all(map(math.isfinite, c)):
            raise ValueError("center must be a finite point in the plane")
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @classmethod
    def parse(cls, text: str) -> "RegionRestriction":
        parts = [float(s) for s in str(text).split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected 'cx,cy,r', got {text!r}")
        return cls((parts[0], parts[1]), parts[2])

    def distance(self, Y) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(Y) - np.asarray(self.center), axis=1)

    def contains(self, Y, slack: float = 1e-3) -> np.ndarray:
        return self.distance(Y) <= self.radius * (1.0 + slack)

    def box(self, factor: float = 1.25) -> BoundingBox:
        cx, cy = self.center
        h = factor * self.radius
        return BoundingBox(cx - h, cx + h, cy - h, cy + h)

    def penalty(self, mu: float):
        """``μ·max(0, ‖y - c‖² - r²)²`` and its image-space gradient."""
        c = np.asarray(self.center)
        r2 = self.radius**2

        def pen(Y, rows):
            d = Y - c
            ex = np.maximum(np.einsum("ij,ij->i", d, d) - r2, 0.0)
            return mu * ex**2, (4.0 * mu * ex)[:, None] * d

        return pen


@dataclass
class MultigridResult:
    state: SampleSet
    history: List[dict] = field(default_factory=list)

    @property
    def energy(self) -> float:
        return self.history[-1]["H"] if self.history else float("nan")


# ---------------------------------------------------------------------------
# refinement


def _admissible(dmap: DiagramMap, Z: np.ndarray, box: BoundingBox):
    """Rows of ``Z`` inside the parameter box whose image is finite and inside ``box``."""
    if len(Z) == 0:
        return Z, np.zeros((0, 2))
    Z = Z[dmap.domain.contains(Z)]
    Y = dmap.evaluate(Z, on_degenerate="nan")
    ok = np.all(np.isfinite(Y), axis=1)
    ok[ok] = box.contains(Y[ok])
    return Z[ok], Y[ok]


def refine_spheres(state: SampleSet, dmap: DiagramMap, cfg: Optional[RefineConfig] = None) -> SampleSet:
    """Add up to ``n_add`` samples around each full-rank sample.

    Around a re-centred sample ``x0`` with ``DF(x0) = U S Vᵀ`` the matrix
    ``W = V S⁻¹ Uᵀ`` satisfies ``DF(x0) W = I``, so ``x0 + r W θ`` moves the
    image by about ``r θ``.  ``r`` is a third of the smallest distance
    between two images.
    """
    cfg = cfg or RefineConfig()
    if len(state) < 2:
        raise ValueError("sphere refinement needs at least 2 samples")
    X = state.samples
    if cfg.recenter:
        X, status = recenter_batch(dmap, X, sv_threshold=cfg.sv_threshold)
        logger.debug("recentred %d of %d samples", int(np.sum(status == Status.CONVERGED)), len(X))
    Y0, J = dmap.value_and_jacobian(X, on_degenerate="nan")
    base = SampleSet(X, Y0, state.box)
    finite = np.all(np.isfinite(Y0), axis=1)
    U, s, Vt = np.linalg.svd(np.where(finite[:, None, None], J, 0.0), full_matrices=False)
    eligible = finite & (s[:, -1] > cfg.sv_threshold)
    if not eligible.any():
        logger.info("sphere refinement: no sample above the singular value threshold")
        return base
    r = float(pdist(Y0[finite]).min()) / 3.0
    theta = 2.0 * np.pi * np.arange(cfg.n_add) / cfg.n_add
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])  # (k, 2)
    idx = np.flatnonzero(eligible)
    W = np.einsum("mkn,mk,mjk->mnj", Vt[idx], 1.0 / s[idx], U[idx])  # (m, N, 2)
    Z = X[idx, None, :] + r * np.einsum("mnj,kj->mkn", W, dirs)
    Z, Yz = _admissible(dmap, Z.reshape(-1, X.shape[1]), state.box)
    logger.debug("sphere refinement: %d skipped, %d candidates kept", int((~eligible).sum()), len(Z))
    return SampleSet(np.vstack([X, Z]), np.vstack([Y0, Yz]), state.box)


def _dedupe_against(Y_old: np.ndarray, Y_new: np.ndarray, tol: float) -> np.ndarray:
    """Indices of ``Y_new`` rows farther than ``tol`` from ``Y_old`` and from earlier kept rows."""
    if len(Y_new) == 0:
        return np.zeros(0, dtype=int)
    far = cKDTree(Y_old).query(Y_new, k=1)[0] > tol
    keep = []
    tree_pts = []
    for i in np.flatnonzero(far):
        if tree_pts and np.min(np.linalg.norm(np.asarray(tree_pts) - Y_new[i], axis=1)) <= tol:
            continue
        keep.append(i)
        tree_pts.append(Y_new[i])
    return np.asarray(keep, dtype=int)


def refine_delaunay(
    state: SampleSet,
    dmap: DiagramMap,
    inverse_opts: Optional[OptimOptions] = None,
    penalty=None,
) -> SampleSet:
    """Add preimages of midpoints of Delaunay edges of moderate length.

    Edges with length in ``[0.5ℓ, 1.5ℓ]`` (``ℓ`` the mean edge length)
    qualify.  Each midpoint is projected twice, once from either endpoint,
    and the solution with the smaller residual is kept.
    """
    tri = delaunay(state.images)
    E = tri.edges()
    L = np.linalg.norm(tri.points[E[:, 0]] - tri.points[E[:, 1]], axis=1)
    ell = float(L.mean())
    E = E[(L >= 0.5 * ell) & (L <= 1.5 * ell)]
    if len(E) == 0:
        return state
    mid = 0.5 * (state.images[E[:, 0]] + state.images[E[:, 1]])
    X0 = np.vstack([state.samples[E[:, 0]], state.samples[E[:, 1]]])
    res = inverse_sample_batch(dmap, np.vstack([mid, mid]), X0, inverse_opts or default_inverse_options(), penalty)
    Y = dmap.evaluate(res.x_star, on_degenerate="nan")
    resid = np.linalg.norm(Y - np.vstack([mid, mid]), axis=1)
    bad = ~np.all(np.isfinite(Y), axis=1) | (res.status == Status.STEP_FAILURE) & (res.iterations == 0)
    resid[bad] = np.inf
    n = len(E)
    pick = np.where(resid[n:] < resid[:n], np.arange(n) + n, np.arange(n))
    pick = pick[np.isfinite(resid[pick])]
    if len(pick) < n:
        logger.info("delaunay refinement: %d projections failed", n - len(pick))
    Z, Yz = res.x_star[pick], Y[pick]
    inside = state.box.contains(Yz)
    Z, Yz = Z[inside], Yz[inside]
    keep = _dedupe_against(state.images, Yz, 1e-3 * ell)
    return SampleSet(np.vstack([state.samples, Z[keep]]), np.vstack([state.images, Yz[keep]]), state.box)


def refine(state: SampleSet, dmap: DiagramMap, cfg: RefineConfig, penalty=None) -> SampleSet:
    if cfg.method == "spheres":
        return refine_spheres(state, dmap, cfg)
    return refine_delaunay(state, dmap, penalty=penalty)


# ---------------------------------------------------------------------------
# region restriction


def _seed_region(state: SampleSet, dmap: DiagramMap, rr: RegionRestriction, rng) -> SampleSet:
    """Move every sample whose image lies outside the disk into it.

    Violators are projected towards random targets in the inner half of the
    disk; the run is infeasible if none of the samples can be brought in.
    """
    out_mask = ~rr.contains(state.images, slack=0.0) | ~state.box.contains(state.images)
    if not out_mask.any():
        return state
    k = int(out_mask.sum())
    rad = 0.5 * rr.radius * np.sqrt(rng.uniform(size=k))
    ang = rng.uniform(0.0, 2.0 * np.pi, size=k)
    targets = np.asarray(rr.center) + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    res = inverse_sample_batch(dmap, targets, state.samples[out_mask])
    Y = dmap.evaluate(res.x_star, on_degenerate="nan")
    ok = np.all(np.isfinite(Y), axis=1)
    ok[ok] = rr.contains(Y[ok], slack=0.0) & state.box.contains(Y[ok])
    X = np.vstack([state.samples[~out_mask], res.x_star[ok]])
    Yall = np.vstack([state.images[~out_mask], Y[ok]])
    if len(X) == 0:
        best = float(np.nanmin(rr.distance(Y)))
        raise InfeasibleRegionError(
            f"no sample reaches the disk around {rr.center} (closest image at distance {best:.4g} > r={rr.radius:g})"
        )
    if len(X) < len(state):
        logger.info("restriction seeding kept %d of %d samples", len(X), len(state))
    return SampleSet(X, Yall, state.box)


def _enforce_region(state: SampleSet, dmap: DiagramMap, rr: RegionRestriction) -> SampleSet:
    """Pull violating images radially into the disk, dropping those that resist."""
    bad = ~rr.contains(state.images)
    if not bad.any():
        return state
    c = np.asarray(rr.center)
    d = state.images[bad] - c
    targets = c + d * (rr.radius * (1.0 - 1e-3) / np.linalg.norm(d, axis=1))[:, None]
    res = inverse_sample_batch(dmap, targets, state.samples[bad])
    Y = dmap.evaluate(res.x_star, on_degenerate="nan")
    ok = np.all(np.isfinite(Y), axis=1)
    ok[ok] = rr.contains(Y[ok]) & state.box.contains(Y[ok])
    X = state.samples.copy()
    Yall = state.images.copy()
    idx = np.flatnonzero(bad)
    X[idx[ok]] = res.x_star[ok]
    Yall[idx[ok]] = Y[ok]
    keep = np.ones(len(X), dtype=bool)
    keep[idx[~ok]] = False
    if (~ok).any():
        logger.info("dropped %d samples outside the restriction disk", int((~ok).sum()))
    return SampleSet(X[keep], Yall[keep], state.box)


def _optimize(dmap: DiagramMap, state: SampleSet, cfg: RefineConfig, rr: Optional[RegionRestriction]) -> SampleSet:
    """One ``q1`` Lloyd pass followed by a ``q2``-capped variational pass."""
    var_opts = OptimOptions(max_iters=max(cfg.q2, 1), grad_tol=1e-10, step_tol=1e-14)
    if rr is None:
        if cfg.q1 > 0:
            state = lloyd_bs(dmap, state, cfg.q1, cfg.eps).state
        if cfg.q2 > 0:
            state = variational_cvt_bs(dmap, state, var_opts).state
        return state
    if cfg.q1 > 0:
        state = lloyd_bs(dmap, state, cfg.q1, cfg.eps, penalty=rr.penalty(RECENTER_PENALTIES[0])).state
    if cfg.q2 > 0:
        for mu in RECENTER_PENALTIES:
            state = variational_cvt_bs(dmap, state, var_opts, penalty=rr.penalty(mu)).state
    return _enforce_region(state, dmap, rr)


def restrict_region(
    state: SampleSet,
    dmap: DiagramMap,
    rr: RegionRestriction,
    cfg: Optional[RefineConfig] = None,
    seed: int = 0,
) -> SampleSet:
    """Optimise ``state`` with every image confined to the disk of ``rr``.

    Samples are first brought into the disk, then optimised under an
    escalating quadratic penalty; on return every image satisfies
    ``‖F(x) - y‖ ≤ r(1 + 10⁻³)``.
    """
    cfg = cfg or RefineConfig(n_ref=0)
    state = _seed_region(state, dmap, rr, np.random.default_rng(seed))
    return _optimize(dmap, state, cfg, rr)


def restricted_box(box: BoundingBox, rr: RegionRestriction) -> BoundingBox:
    """Tessellation box of a restricted run: ``box`` intersected with a square around the disk."""
    return box.intersection(rr.box())


# ---------------------------------------------------------------------------
# multigrid


def initial_state(dmap: DiagramMap, M0: int, seed: int, box: Optional[BoundingBox] = None) -> SampleSet:
    rng = np.random.default_rng(seed)
    X = dmap.domain.sample(rng, M0)
    Y = dmap.evaluate(X, on_degenerate="nan")
    good = np.all(np.isfinite(Y), axis=1)
    X, Y = X[good], Y[good]
    return SampleSet(X, Y, box or dmap.default_box)


def multigrid(
    dmap: DiagramMap,
    M0: int,
    cfg: Optional[RefineConfig] = None,
    seed: int = 0,
    box: Optional[BoundingBox] = None,
    restriction: Optional[RegionRestriction] = None,
    initial: Optional[SampleSet] = None,
) -> MultigridResult:
    """Optimise ``M0`` random samples, then alternate refinement and optimisation.

    ``history`` holds one entry per round with the sample count ``M`` and the
    final energy ``H``.  A round never ends with a higher energy than right
    after its refinement step: if the optimisation does, the variational pass
    is rerun from the refined state and the better of the candidates kept.
    """
    cfg = cfg or RefineConfig()
    if M0 < 3:
        raise ValueError("M0 must be at least 3")
    box = box or dmap.default_box
    if restriction is not None:
        box = restricted_box(box, restriction)
    if initial is not None:
        state = SampleSet(initial.samples, initial.images, box)
    else:
        state = initial_state(dmap, M0, seed, box)
    if restriction is not None:
        state = _seed_region(state, dmap, restriction, np.random.default_rng(seed))
    state = _optimize(dmap, state, cfg, restriction)
    history = [{"round": 0, "M": len(state), "H": energy_report(state).energy}]
    pen = restriction.penalty(RECENTER_PENALTIES[-1]) if restriction is not None else None
    for rnd in range(1, cfg.n_ref + 1):
        M_before = len(state)
        refined = refine(state, dmap, cfg, pen)
        if restriction is not None:
            refined = _enforce_region(refined, dmap, restriction)
        if len(refined) <= M_before:
            logger.info("round %d added no samples; stopping", rnd)
            break
        H_ref = energy_report(refined).energy
        new = _optimize(dmap, refined, cfg, restriction)
        H_new = energy_report(new).energy
        if H_new > H_ref and len(new) == len(refined):
            opts = OptimOptions(max_iters=max(cfg.q2, 1), grad_tol=1e-10, step_tol=1e-14)
            alt = variational_cvt_bs(dmap, refined, opts).state
            H_alt = energy_report(alt).energy
            new, H_new = (alt, H_alt) if H_alt <= H_ref else (refined, H_ref)
            logger.info("round %d: optimisation raised H; kept H=%.6g", rnd, H_new)
        state = new
        history.append({"round": rnd, "M": len(state), "H": H_new})
        logger.info("round %d: M=%d H=%.6g", rnd, len(state), H_new)
    return MultigridResult(state, history)


# ---------------------------------------------------------------------------
# boundary extraction


@dataclass
class BoundaryResult:
    polygons: List[Polygon]
    flagged: np.ndarray  # sample indices with large centroid displacement
    kept_triangles: np.ndarray
    displacements: np.ndarray

    @property
    def area(self) -> float:
        return float(sum(p.area for p in self.polygons))


def flag_boundary_samples(displacements: np.ndarray, factor: float = 3.0) -> np.ndarray:
    med = float(np.median(displacements))
    return np.flatnonzero(displacements > factor * med)


def extract_boundary(
    state: SampleSet,
    min_angle_deg: float = 12.0,
    max_angle_deg: float = 155.0,
    max_edge_factor: Optional[float] = 3.0,
) -> BoundaryResult:
    """Outer boundary of the image set after discarding flat Delaunay triangles.

    Triangles with an angle below ``min_angle_deg`` or above
    ``max_angle_deg`` are dropped, as are triangles with an edge longer than
    ``max_edge_factor`` times the median edge (``None`` disables that test).
    Returns the exterior rings of the union of the rest, largest first.
    """
    Y = np.asarray(state.images, dtype=float)
    if len(Y) < 3:
        raise DegenerateInputError("boundary extraction needs at least 3 samples")
    tri = delaunay(Y)
    ang = tri.angles()
    keep = (ang.min(axis=1) >= min_angle_deg) & (ang.max(axis=1) <= max_angle_deg)
    if max_edge_factor is not None:
        P = Y[tri.triangles]
        longest = np.max(np.linalg.norm(P - np.roll(P, -1, axis=1), axis=2), axis=1)
        keep &= longest <= max_edge_factor * np.median(tri.edge_lengths())
    kept = tri.triangles[keep]
    if len(kept) == 0:
        raise ExtractionError(
            f"no triangle survives the filter (min angle {min_angle_deg}, max angle {max_angle_deg}); relax the thresholds"
        )
    union = unary_union([ShapelyPolygon(Y[t]) for t in kept])
    parts = list(getattr(union, "geoms", [union]))
    parts.sort(key=lambda g: -g.area)
    polys = []
    for g in parts:
        ring = np.asarray(orient(ShapelyPolygon(g.exterior), 1.0).exterior.coords)[:-1]
        polys.append(Polygon(ring))
    disp = energy_report(state).displacements
    return BoundaryResult(polys, flag_boundary_samples(disp), kept, disp)


def hausdorff(a, b, step: Optional[float] = None) -> float:
    """Symmetric Hausdorff distance between two closed polygonal curves."""
    A = a.vertices if isinstance(a, Polygon) else np.asarray(a, dtype=float)
    B = b.vertices if isinstance(b, Polygon) else np.asarray(b, dtype=float)
    if step is None:
        span = max(np.ptp(A, axis=0).max(), np.ptp(B, axis=0).max())
        step = span / 2000.0
    A, B = densify(A, step), densify(B, step)
    return max(directed_hausdorff(A, B)[0], directed_hausdorff(B, A)[0])
