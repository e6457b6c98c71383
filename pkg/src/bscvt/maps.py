"""Diagram maps ``F: X ⊂ R^N → R²`` with analytic Jacobians.

Two concrete maps are provided:

``tracedet:<d>``
    ``A ↦ (tr A, det A)`` on symmetric ``d×d`` matrices with entries in
    ``[-1, 1]``, encoded as the concatenation of the diagonals ``j - i = 0..d-1``.
``apw:<q>``
    ``Ω ↦ (100·A/P², A²/W)`` on convex polygons with two axes of symmetry
    whose upper-right boundary is a concave decreasing profile sampled at
    ``x_i = i/q`` and parametrised by its second differences.

All maps work on batches: ``X`` has shape ``(M, N)``, images ``(M, 2)`` and
Jacobians ``(M, 2, N)``.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
import math
import re

import numpy as np

from .exceptions import DegenerateShapeError, EncodingError
from .geometry import BoundingBox, Polygon, perimeter, second_moment, signed_area

SHAPE_AREA_MIN = 1e-8


class BoxDomain:
    """Parameter set ``∏ [lower_i, upper_i]``."""

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1 or lower.size == 0:
            raise ValueError("lower and upper must be non-empty vectors of equal length")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must be strictly below its upper bound")
        self.lower = lower
        self.upper = upper

    def __repr__(self):
        return f"BoxDomain(n_params={self.n_params})"

    @property
    def n_params(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def clip(self, X):
        return np.clip(X, self.lower, self.upper)

    def contains(self, X, tol: float = 0.0) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= self.lower - tol) & (X <= self.upper + tol), axis=1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.n_params))


class DiagramMap(ABC):
    """Smooth map from a :class:`BoxDomain` to the plane.

    Subclasses implement the batched ``_evaluate`` and ``_value_and_jacobian``
    which return a boolean ``ok`` mask alongside the values; rows with
    ``ok == False`` are degenerate parameter vectors.
    """

    name: str
    domain: BoxDomain
    default_box: BoundingBox

    @property
    def n_params(self) -> int:
        return self.domain.n_params

    def _as_batch(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_params:
            raise EncodingError(f"{self.name} expects {self.n_params} parameters, got {X.shape[1]}")
        return X, single

    @abstractmethod
    def _evaluate(self, X):
        ...

    @abstractmethod
    def _value_and_jacobian(self, X):
        ...

    def _handle(self, ok, on_degenerate, *arrays):
        if ok.all():
            return arrays
        if on_degenerate == "raise":
            raise self.degenerate_error(np.flatnonzero(~ok))
        for a in arrays:
            a[~ok] = np.nan
        return arrays

    def degenerate_error(self, rows):
        return ValueError(f"degenerate parameters in rows {rows[:5].tolist()}")

    def evaluate(self, X, on_degenerate: str = "raise") -> np.ndarray:
        """Images of one parameter vector (shape ``(2,)``) or a batch (``(M, 2)``).

        With ``on_degenerate="nan"`` degenerate rows come back as NaN instead
        of raising.
        """
        Xb, single = self._as_batch(X)
        Y, ok = self._evaluate(Xb)
        (Y,) = self._handle(ok, on_degenerate, Y)
        return Y[0] if single else Y

    def jacobian(self, X, on_degenerate: str = "raise") -> np.ndarray:
        return self.value_and_jacobian(X, on_degenerate)[1]

    def value_and_jacobian(self, X, on_degenerate: str = "raise"):
        Xb, single = self._as_batch(X)
        Y, J, ok = self._value_and_jacobian(Xb)
        Y, J = self._handle(ok, on_degenerate, Y, J)
        return (Y[0], J[0]) if single else (Y, J)

    __call__ = evaluate


# ---------------------------------------------------------------------------
# (trace, det) of symmetric matrices


@lru_cache(maxsize=None)
def _sym_index(d: int):
    rows, cols = [], []
    for k in range(d):
        for i in range(d - k):
            rows.append(i)
            cols.append(i + k)
    return np.array(rows), np.array(cols)


def sym_length(d: int) -> int:
    return d * (d + 1) // 2


def sym_from_vec(V, d: int) -> np.ndarray:
    """Symmetric matrices from diagonal-concatenation vectors (batched)."""
    V = np.asarray(V, dtype=float)
    if V.shape[-1] != sym_length(d):
        raise EncodingError(f"d={d} needs {sym_length(d)} entries, got {V.shape[-1]}")
    r, c = _sym_index(d)
    A = np.zeros(V.shape[:-1] + (d, d))
    A[..., r, c] = V
    A[..., c, r] = V
    return A


def vec_from_sym(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    r, c = _sym_index(A.shape[-1])
    return A[..., r, c]


def adjugate(A) -> np.ndarray:
    """Adjugate (transposed cofactor matrix) by explicit minors; batched."""
    A = np.asarray(A, dtype=float)
    d = A.shape[-1]
    adj = np.empty_like(A)
    if d == 1:
        adj[...] = 1.0
        return adj
    idx = np.arange(d)
    for i in range(d):
        ri = idx[idx != i]
        for j in range(d):
            cj = idx[idx != j]
            minor = A[..., ri[:, None], cj[None, :]]
            adj[..., j, i] = (-1) ** (i + j) * _det_small(minor)
    return adj


def _det_small(A):
    d = A.shape[-1]
    if d == 1:
        return A[..., 0, 0]
    if d == 2:
        return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    if d == 3:
        return (
            A[..., 0, 0] * (A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1])
            - A[..., 0, 1] * (A[..., 1, 0] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 0])
            + A[..., 0, 2] * (A[..., 1, 0] * A[..., 2, 1] - A[..., 1, 1] * A[..., 2, 0])
        )
    return np.linalg.det(A)


class TraceDetMap(DiagramMap):
    def __init__(self, d: int):
        if d < 2:
            raise ValueError("tracedet needs d >= 2")
        self.d = int(d)
        self.name = f"tracedet:{self.d}"
        n = sym_length(self.d)
        self.domain = BoxDomain(-np.ones(n), np.ones(n))
        self.default_box = _TRACEDET_BOXES.get(self.d) or BoundingBox(
            -1.25 * d, 1.25 * d, -1.25 * d ** (d / 2), 1.25 * d ** (d / 2)
        )

    def __repr__(self):
        return f"TraceDetMap(d={self.d})"

    def _evaluate(self, X):
        A = sym_from_vec(X, self.d)
        adj = adjugate(A)
        det = np.einsum("...j,...j->...", A[..., 0, :], adj[..., :, 0])
        tr = np.trace(A, axis1=-2, axis2=-1)
        return np.column_stack([tr, det]), np.ones(len(X), dtype=bool)

    def _value_and_jacobian(self, X):
        d = self.d
        A = sym_from_vec(X, d)
        adj = adjugate(A)
        det = np.einsum("...j,...j->...", A[..., 0, :], adj[..., :, 0])
        tr = np.trace(A, axis1=-2, axis2=-1)
        r, c = _sym_index(d)
        J = np.zeros((len(X), 2, self.n_params))
        J[:, 0, :d] = 1.0
        # one parameter drives both (i, j) and (j, i) off the diagonal
        J[:, 1, :] = adj[:, c, r] + np.where(r == c, 0.0, adj[:, r, c])
        return np.column_stack([tr, det]), J, np.ones(len(X), dtype=bool)


_TRACEDET_BOXES = {
    2: BoundingBox(-2.5, 2.5, -2.5, 2.5),
    3: BoundingBox(-5.0, 5.0, -5.0, 5.0),
    4: BoundingBox(-6.0, 6.0, -20.0, 20.0),
}


def tracedet_eval(v, d: int) -> np.ndarray:
    """``(trace, det)`` of the symmetric matrix encoded by ``v``."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != sym_length(d):
        raise EncodingError(f"d={d} needs a vector of {sym_length(d)} entries")
    return TraceDetMap(d).evaluate(v)


def tracedet_jacobian(v, d: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != sym_length(d):
        raise EncodingError(f"d={d} needs a vector of {sym_length(d)} entries")
    return TraceDetMap(d).jacobian(v)


def tracedet2_contains(points, tol: float = 0.0) -> np.ndarray:
    """Membership in the exact d=2 diagram ``{|t| - 2 <= δ <= t²/4, |t| <= 2}``."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    t, dt = p[:, 0], p[:, 1]
    return (np.abs(t) <= 2 + tol) & (dt <= t * t / 4 + tol) & (dt >= np.abs(t) - 2 - tol)


def tracedet2_boundary(n: int = 400) -> Polygon:
    """CCW polygon tracing the exact d=2 diagram boundary."""
    t = np.linspace(2.0, -2.0, n)
    upper = np.column_stack([t, t * t / 4])
    lower = np.array([[-2.0, 0.0], [0.0, -2.0], [2.0, 0.0]])
    return Polygon(np.vstack([upper, lower]))


TRACEDET2_AREA = 16.0 / 3.0


# ---------------------------------------------------------------------------
# (area, perimeter, inertia) of doubly symmetric convex polygons


@lru_cache(maxsize=None)
def height_matrix(q: int) -> np.ndarray:
    """Constant linear map from ``(ρ_0..ρ_{q-1}, h_q)`` to heights ``h_0..h_q``."""
    i = np.arange(q + 1)[:, None]
    k = np.arange(q)[None, :]
    B = np.zeros((q + 1, q + 1))
    B[:, :q] = q - np.maximum(i, k)
    B[:, q] = 1.0
    B.setflags(write=False)
    return B


def shape_heights(p, q: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != q + 1:
        raise EncodingError(f"apw:{q} needs {q + 1} parameters, got {p.shape[-1]}")
    return p @ height_matrix(q).T


def params_from_heights(h) -> np.ndarray:
    """Inverse of :func:`shape_heights` for a concave decreasing profile."""
    h = np.asarray(h, dtype=float)
    z = h[..., :-1] - h[..., 1:]
    rho = np.concatenate([z[..., :1], np.diff(z, axis=-1)], axis=-1)
    return np.concatenate([rho, h[..., -1:]], axis=-1)


def _merge_ring(v: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    changed = True
    while changed and len(v) >= 3:
        changed = False
        keep = np.linalg.norm(v - np.roll(v, 1, axis=0), axis=1) > tol
        if not keep.all():
            v = v[keep]
            changed = True
            continue
        prev, nxt = np.roll(v, 1, axis=0), np.roll(v, -1, axis=0)
        cr = (v[:, 0] - prev[:, 0]) * (nxt[:, 1] - prev[:, 1]) - (v[:, 1] - prev[:, 1]) * (nxt[:, 0] - prev[:, 0])
        scale = np.linalg.norm(nxt - prev, axis=1)
        flat = np.abs(cr) <= tol * np.maximum(scale, 1.0)
        if flat.any():
            # drop one vertex at a time so neighbouring collinear runs stay consistent
            v = np.delete(v, np.flatnonzero(flat)[0], axis=0)
            changed = True
    return v


def shape_build(p, q: int) -> Polygon:
    """Doubly symmetric convex polygon for the parameters ``(ρ, h_q)``."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size != q + 1:
        raise EncodingError(f"apw:{q} needs {q + 1} parameters")
    h = shape_heights(p, q)
    x = np.arange(q + 1) / q
    area = 2.0 / q * np.sum(h[:-1] + h[1:])
    if not area >= SHAPE_AREA_MIN:
        raise DegenerateShapeError(f"shape area {area:.3g} below {SHAPE_AREA_MIN}")
    right_to_top = np.column_stack([x[::-1], h[::-1]])
    top_to_left = np.column_stack([-x[1:], h[1:]])
    upper = np.vstack([right_to_top, top_to_left])
    ring = np.vstack([upper, -upper])
    return Polygon(_merge_ring(ring))


def apw_from_polygon(poly: Polygon) -> np.ndarray:
    a = abs(signed_area(poly))
    per = perimeter(poly)
    w = abs(second_moment(poly))
    return np.array([100.0 * a / per**2, a * a / w])


def apw_eval(p, q: int) -> np.ndarray:
    """``(100·A/P², A²/W)`` of the polygon built from ``p`` (polygon route)."""
    return apw_from_polygon(shape_build(p, q))


def _apw_from_heights(H, q: int, with_grad: bool):
    w = 1.0 / q
    x = np.arange(q + 1) * w
    a, b = H[:, :-1], H[:, 1:]
    area = 2.0 * w * np.sum(a + b, axis=1)
    dh = a - b
    seg = np.sqrt(w * w + dh * dh)
    per = 4.0 * seg.sum(axis=1) + 4.0 * H[:, -1]
    x0, x1 = x[:-1], x[1:]
    xm = 0.5 * (x0 + x1)
    # ∫x²h dx by Simpson (exact for cubics) and ∫h³/3 dx, per segment
    cx0 = w / 6.0 * (x0**2 + 2.0 * xm**2)
    cx1 = w / 6.0 * (2.0 * xm**2 + x1**2)
    inert = 4.0 * np.sum(cx0 * a + cx1 * b + w / 12.0 * (a**3 + a * a * b + a * b * b + b**3), axis=1)
    ok = area >= SHAPE_AREA_MIN
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.column_stack([100.0 * area / per**2, area**2 / inert])
    if not with_grad:
        return F, None, ok
    M = len(H)
    dA = np.full(q + 1, 4.0 * w)
    dA[0] = dA[-1] = 2.0 * w
    dA = np.broadcast_to(dA, (M, q + 1))
    dP = np.zeros((M, q + 1))
    t = 4.0 * dh / seg
    dP[:, :-1] += t
    dP[:, 1:] -= t
    dP[:, -1] += 4.0
    dW = np.zeros((M, q + 1))
    dW[:, :-1] += 4.0 * (cx0 + w / 12.0 * (3 * a * a + 2 * a * b + b * b))
    dW[:, 1:] += 4.0 * (cx1 + w / 12.0 * (a * a + 2 * a * b + 3 * b * b))
    with np.errstate(divide="ignore", invalid="ignore"):
        g1 = 100.0 * (dA / per[:, None] ** 2 - 2.0 * area[:, None] * dP / per[:, None] ** 3)
        g2 = 2.0 * area[:, None] * dA / inert[:, None] - (area**2 / inert**2)[:, None] * dW
    return F, np.stack([g1, g2], axis=1), ok


class APWMap(DiagramMap):
    """Scale-invariant (area, perimeter, inertia) ratios of convex shapes."""

    def __init__(self, q: int, rho_max: float = 1.0, height_max: float = 1.0):
        if q < 2:
            raise ValueError("apw needs q >= 2")
        self.q = int(q)
        self.name = f"apw:{self.q}"
        self.domain = BoxDomain(np.zeros(q + 1), np.r_[np.full(q, rho_max), height_max])
        self.default_box = BoundingBox(-1.0, 9.0, -1.0, 7.5)

    def __repr__(self):
        return f"APWMap(q={self.q})"

    def degenerate_error(self, rows):
        return DegenerateShapeError(f"zero-area shapes in rows {rows[:5].tolist()}")

    def _evaluate(self, X):
        F, _, ok = _apw_from_heights(shape_heights(X, self.q), self.q, with_grad=False)
        return F, ok

    def _value_and_jacobian(self, X):
        F, G, ok = _apw_from_heights(shape_heights(X, self.q), self.q, with_grad=True)
        return F, G @ height_matrix(self.q), ok


def apw_jacobian(p, q: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size != q + 1:
        raise EncodingError(f"apw:{q} needs {q + 1} parameters")
    return APWMap(q).jacobian(p)


APW_DISK = np.array([100.0 / (4.0 * math.pi), 2.0 * math.pi])


# ---------------------------------------------------------------------------
# registry and Monte Carlo


_MAP_RE = re.compile(r"^\s*(tracedet|apw)\s*:\s*(\d+)\s*$")


def get_map(name) -> DiagramMap:
    """Resolve ``"tracedet:<d>"`` / ``"apw:<q>"``; map instances pass through."""
    if isinstance(name, DiagramMap):
        return name
    m = _MAP_RE.match(str(name))
    if not m:
        raise ValueError(f"unknown map {name!r}; expected 'tracedet:<d>' or 'apw:<q>'")
    kind, n = m.group(1), int(m.group(2))
    return TraceDetMap(n) if kind == "tracedet" else APWMap(n)


@dataclass
class MonteCarloResult:
    samples: np.ndarray
    images: np.ndarray
    n_skipped: int


def _attempt_rng(seed: int, index: int) -> np.random.Generator:
    # counter-based: the draw for attempt ``index`` does not depend on any other
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, index, 0, 0]))


def monte_carlo(dmap, n: int, seed: int = 0) -> MonteCarloResult:
    """Images of ``n`` uniform samples of the parameter box.

    Degenerate draws are skipped and replaced by further draws; at most
    ``100·n`` attempts are made.
    """
    dmap = get_map(dmap)
    if n < 1:
        raise ValueError("n must be >= 1")
    dom = dmap.domain
    samples, images = [], []
    skipped = 0
    attempt = 0
    batch = n
    while len(samples) < n:
        if attempt >= 100 * n:
            raise RuntimeError(f"gave up after {attempt} attempts ({skipped} degenerate)")
        idx = range(attempt, min(attempt + batch, 100 * n))
        X = np.array([_attempt_rng(seed, j).uniform(dom.lower, dom.upper) for j in idx])
        attempt += len(X)
        Y = dmap.evaluate(X, on_degenerate="nan")
        good = np.all(np.isfinite(Y), axis=1)
        skipped += int((~good).sum())
        need = n - len(samples)
        samples.extend(X[good][:need])
        images.extend(Y[good][:need])
        batch = max(need, 16)
    return MonteCarloResult(np.array(samples), np.array(images), skipped)
