"""Estimator-style front end (``fit`` / ``transform`` / ``get_params``)."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cvt import SampleSet, energy_report, lloyd_bs, variational_cvt_bs
from .geometry import BoundingBox
from .maps import monte_carlo
from .optim import OptimOptions
from .pipeline import RefineConfig, RegionRestriction, extract_boundary, initial_state, multigrid
from .validation import check_box, check_images, check_map, check_positive_int, check_samples, check_seed

ALGORITHMS = ("multigrid", "lloyd", "variational")
AUTO_PROBE = 2000


def auto_box(dmap, images=None, margin: float = 0.25, seed: int = 0) -> BoundingBox:
    """Map default box joined with the box of observed images grown by ``margin``.

    Observed images are ``images`` plus a seeded Monte Carlo probe of the map.
    """
    probe = monte_carlo(dmap, AUTO_PROBE, seed).images
    pts = probe if images is None else np.vstack([probe, np.atleast_2d(images)])
    return dmap.default_box.union(BoundingBox.from_points(pts, margin))


class CVTDiagramSampler(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Samples of a parameter box whose images form a CVT of the map's image.

    Parameters
    ----------
    map : str or DiagramMap
        ``"tracedet:<d>"``, ``"apw:<q>"`` or a map instance.
    n_samples : int
        Initial number of random samples (ignored when ``fit`` gets samples).
    algorithm : {"multigrid", "lloyd", "variational"}
        ``multigrid`` runs ``q1`` Lloyd and ``q2`` variational iterations per
        round over ``n_refinements`` refinement rounds; the other two run a
        single method for at most ``max_iter`` iterations.
    box : None, "auto", str or 4-tuple
        Tessellation box; ``None`` uses the map's default box.
    restriction : None, str ``"cx,cy,r"`` or RegionRestriction
        Confine all images to a disk (multigrid only).
    """

    def __init__(
        self,
        map="tracedet:2",
        n_samples=200,
        algorithm="multigrid",
        box=None,
        eps=1e-4,
        q1=50,
        q2=1500,
        n_refinements=0,
        refine_method="spheres",
        n_add=4,
        sv_threshold=1e-3,
        max_iter=1000,
        restriction=None,
        random_state=0,
    ):
        self.map = map
        self.n_samples = n_samples
        self.algorithm = algorithm
        self.box = box
        self.eps = eps
        self.q1 = q1
        self.q2 = q2
        self.n_refinements = n_refinements
        self.refine_method = refine_method
        self.n_add = n_add
        self.sv_threshold = sv_threshold
        self.max_iter = max_iter
        self.restriction = restriction
        self.random_state = random_state

    def _resolve_box(self, dmap, seed, images):
        if isinstance(self.box, str) and self.box.strip().lower() == "auto":
            return auto_box(dmap, images, seed=seed)
        return check_box(self.box) or dmap.default_box

    def _restriction(self) -> Optional[RegionRestriction]:
        r = self.restriction
        if r is None or isinstance(r, RegionRestriction):
            return r
        if isinstance(r, str):
            return RegionRestriction.parse(r)
        c0, c1, rad = np.asarray(r, dtype=float).ravel()
        return RegionRestriction((c0, c1), rad)

    def fit(self, X=None, y=None):
        """Optimise samples; ``X`` optionally gives the initial samples."""
        dmap = check_map(self.map)
        seed = check_seed(self.random_state)
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if X is None:
            M0 = check_positive_int(self.n_samples, "n_samples", 3)
            state = initial_state(dmap, M0, seed, dmap.default_box)
        else:
            X = check_samples(X, dmap)
            state = SampleSet.from_samples(dmap, X, dmap.default_box)
        box = self._resolve_box(dmap, seed, state.images)
        state = SampleSet(state.samples, state.images, box)
        rr = self._restriction()
        history = []
        if self.algorithm == "multigrid":
            cfg = RefineConfig(
                n_ref=check_positive_int(self.n_refinements, "n_refinements", 0),
                n_add=self.n_add,
                method=self.refine_method,
                q1=check_positive_int(self.q1, "q1", 0),
                q2=check_positive_int(self.q2, "q2", 0),
                sv_threshold=self.sv_threshold,
                eps=self.eps,
            )
            res = multigrid(dmap, len(state), cfg, seed, box, rr, initial=state)
            state, history = res.state, res.history
        else:
            if rr is not None:
                raise ValueError("restriction requires algorithm='multigrid'")
            n = check_positive_int(self.max_iter, "max_iter")
            if self.algorithm == "lloyd":
                out = lloyd_bs(dmap, state, n, self.eps)
            else:
                out = variational_cvt_bs(dmap, state, OptimOptions(max_iters=n, grad_tol=1e-10, step_tol=1e-14))
            state = out.state
            history = [{"round": 0, "M": len(state), "H": out.energy}]
        self.map_ = dmap
        self.box_ = state.box
        self.state_ = state
        self.samples_ = state.samples
        self.images_ = state.images
        self.history_ = history
        self.energy_ = energy_report(state).energy
        self.n_features_in_ = dmap.n_params
        return self

    def transform(self, X=None):
        """Images of ``X`` under the map (the fitted images when ``X`` is None)."""
        check_is_fitted(self, "images_")
        if X is None:
            return self.images_.copy()
        return self.map_.evaluate(check_samples(X, self.map_, in_domain=False))

    def fit_transform(self, X=None, y=None, **fit_params):
        return self.fit(X, y).images_.copy()


class MonteCarloSampler(BaseEstimator):
    """Images of uniform random samples of the parameter box."""

    def __init__(self, map="tracedet:2", n_samples=1000, random_state=0):
        self.map = map
        self.n_samples = n_samples
        self.random_state = random_state

    def fit(self, X=None, y=None):
        dmap = check_map(self.map)
        n = check_positive_int(self.n_samples, "n_samples")
        res = monte_carlo(dmap, n, check_seed(self.random_state))
        self.map_ = dmap
        self.samples_, self.images_, self.n_skipped_ = res.samples, res.images, res.n_skipped
        return self


class BoundaryExtractor(BaseEstimator):
    """Outer boundary of a point cloud of images after dropping flat triangles."""

    def __init__(self, min_angle_deg=12.0, max_angle_deg=155.0, max_edge_factor=3.0, box=None):
        self.min_angle_deg = min_angle_deg
        self.max_angle_deg = max_angle_deg
        self.max_edge_factor = max_edge_factor
        self.box = box

    def fit(self, X, y=None):
        """``X`` holds image points, shape ``(M, 2)``."""
        Y = check_images(X)
        if len(Y) < 3:
            raise ValueError("need at least 3 images")
        box = check_box(self.box) or BoundingBox.from_points(Y, 0.25)
        res = extract_boundary(
            SampleSet(np.zeros((len(Y), 0)), Y, box), self.min_angle_deg, self.max_angle_deg, self.max_edge_factor
        )
        self.polygons_ = res.polygons
        self.flagged_ = res.flagged
        self.area_ = res.area
        self.box_ = box
        return self
