"""CVT energy, Lloyd iterations and their counterparts composed with a map.

The CVT energy of generators ``y_i`` in a box ``D`` is
``G = Σ_i ∫_{V_i} |x - y_i|² dx`` with gradient ``2|V_i|(y_i - c_i)``.
Composing with a diagram map gives ``H(x_1..x_M) = G(F(x_1)..F(x_M))``,
whose gradient is ``2|V_i| DF(x_i)ᵀ (F(x_i) - c_i)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DomainError, GeometryError
from .geometry import BoundingBox, voronoi_moments
from .maps import DiagramMap
from .optim import OptimOptions, Status, default_inverse_options, inverse_sample_batch, minimize_box_batch

logger = logging.getLogger(__name__)


@dataclass
class SampleSet:
    """Parameter samples, their cached images and the tessellation box ``D``."""

    samples: np.ndarray
    images: np.ndarray
    box: BoundingBox

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        self.images = np.atleast_2d(np.asarray(self.images, dtype=float))
        if len(self.samples) != len(self.images):
            raise ValueError("samples and images differ in length")

    @classmethod
    def from_samples(cls, dmap: DiagramMap, samples, box: BoundingBox) -> "SampleSet":
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        return cls(samples, dmap.evaluate(samples), box)

    def __len__(self):
        return len(self.samples)

    def with_samples(self, dmap: DiagramMap, samples) -> "SampleSet":
        return SampleSet.from_samples(dmap, samples, self.box)

    def check(self, dmap: DiagramMap, tol: float = 1e-12) -> None:
        """Raise if the image cache is stale or an image has left the box."""
        err = np.abs(dmap.evaluate(self.samples) - self.images).max(initial=0.0)
        if err > tol * max(1.0, np.abs(self.images).max(initial=0.0)):
            raise ValueError(f"image cache out of date by {err:.3g}")
        if not np.all(self.box.contains(self.images)):
            raise DomainError("images outside the tessellation box")


@dataclass
class EnergyReport:
    energy: float
    areas: np.ndarray
    centroids: np.ndarray
    displacements: np.ndarray  # ‖y_i - c_i‖

    @property
    def per_cell(self):
        return list(zip(self.areas, self.centroids, self.displacements))


def cvt_energy_grad(points, box: BoundingBox, rng=None):
    """``(EnergyReport, gradient)`` of the CVT energy at ``points``."""
    mom = voronoi_moments(points, box, rng)
    y = mom.generators
    disp = y - mom.centroids
    report = EnergyReport(
        energy=mom.energy,
        areas=mom.areas,
        centroids=mom.centroids,
        displacements=np.linalg.norm(disp, axis=1),
    )
    return report, 2.0 * mom.areas[:, None] * disp


def cvt_energy(points, box: BoundingBox) -> float:
    return voronoi_moments(points, box).energy


def lloyd_step(points, box: BoundingBox) -> np.ndarray:
    """Replace every generator by the centroid of its clipped Voronoi cell."""
    return voronoi_moments(points, box).centroids


# ---------------------------------------------------------------------------
# composed with a diagram map


@dataclass
class CVTResult:
    state: SampleSet
    report: EnergyReport
    iterations: int
    converged: bool
    log: list = field(default_factory=list, repr=False)

    @property
    def energy(self) -> float:
        return self.report.energy


def energy_report(state: SampleSet) -> EnergyReport:
    return cvt_energy_grad(state.images, state.box)[0]


def lloyd_bs(
    dmap: DiagramMap,
    state: SampleSet,
    max_iters: int = 1000,
    eps: float = 1e-4,
    inverse_opts: Optional[OptimOptions] = None,
    penalty=None,
) -> CVTResult:
    """Lloyd iteration with projection onto the image of the map.

    Every iteration tessellates the images, then moves each sample to the
    parameters whose image is closest to its cell centroid (a local search
    warm-started at the current sample).  Stops once every image moved by
    less than ``eps``.  Samples whose projection fails keep their position for
    that iteration.
    """
    inverse_opts = inverse_opts or default_inverse_options()
    X = state.samples.copy()
    Y = state.images.copy()
    box = state.box
    log = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        report, _ = cvt_energy_grad(Y, box)
        res = inverse_sample_batch(dmap, report.centroids, X, inverse_opts, penalty=penalty)
        X_new = res.x_star
        Y_new = dmap.evaluate(X_new, on_degenerate="nan")
        failed = (res.status == Status.STEP_FAILURE) & (res.iterations == 0)
        failed |= ~np.all(np.isfinite(Y_new), axis=1) | ~box.contains(Y_new)
        if failed.any():
            logger.debug("lloyd_bs iteration %d: %d projections failed", it, int(failed.sum()))
            X_new[failed] = X[failed]
            Y_new[failed] = Y[failed]
        move = np.linalg.norm(Y_new - Y, axis=1)
        log.append({"iteration": it, "energy": report.energy, "max_move": float(move.max()), "failed": int(failed.sum())})
        X, Y = X_new, Y_new
        if move.max() < eps:
            converged = True
            break
    out = SampleSet(X, Y, box)
    return CVTResult(out, energy_report(out), it, converged, log)


def composed_energy_grad(state: SampleSet, dmap: DiagramMap):
    """``H`` at the state's samples and its gradient with shape ``(M, N)``."""
    Y, J = dmap.value_and_jacobian(state.samples)
    report, gy = cvt_energy_grad(Y, state.box)
    return report.energy, np.einsum("mi,min->mn", gy, J)


def _stacked_objective(dmap: DiagramMap, M: int, box: BoundingBox, penalty=None):
    N = dmap.n_params

    def fun(Z, rows):
        X = Z[0].reshape(M, N)
        Y, J = dmap.value_and_jacobian(X, on_degenerate="nan")
        if not np.all(np.isfinite(Y)) or not np.all(box.contains(Y)):
            return np.array([np.inf]), np.full((1, M * N), np.nan)
        try:
            report, gy = cvt_energy_grad(Y, box)
        except GeometryError:
            return np.array([np.inf]), np.full((1, M * N), np.nan)
        H = report.energy
        if penalty is not None:
            pv, pg = penalty(Y, np.arange(M))
            H += float(pv.sum())
            gy = gy + pg
        g = np.einsum("mi,min->mn", gy, J)
        return np.array([H]), g.reshape(1, -1)

    return fun


def variational_cvt_bs(
    dmap: DiagramMap,
    state: SampleSet,
    opts: Optional[OptimOptions] = None,
    penalty=None,
) -> CVTResult:
    """Minimise the composed energy ``H`` over all samples jointly.

    Returns the best iterate found; ``H`` never ends above its initial value.
    """
    opts = opts or OptimOptions(max_iters=1000, grad_tol=1e-10, step_tol=1e-14)
    M, N = state.samples.shape
    fun = _stacked_objective(dmap, M, state.box, penalty)
    lower = np.tile(dmap.domain.lower, M)
    upper = np.tile(dmap.domain.upper, M)
    res = minimize_box_batch(fun, lower, upper, state.samples.reshape(1, -1), opts)
    X = res.x_star[0].reshape(M, N)
    out = SampleSet.from_samples(dmap, X, state.box)
    log = [{"status": res.status[0].value, "iterations": int(res.iterations[0]), "evals": res.evals}]
    conv = res.status[0] == Status.CONVERGED
    return CVTResult(out, energy_report(out), int(res.iterations[0]), conv, log)
