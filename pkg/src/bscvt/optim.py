"""Box-constrained limited-memory quasi-Newton minimisation and map inversion.

:func:`minimize_box_batch` solves ``B`` independent problems of equal size in
lock-step: every row keeps its own L-BFGS memory, line search and stopping
state, while the objective is evaluated for all active rows at once.  The
single-problem :func:`minimize_box` is the ``B = 1`` case.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .maps import BoxDomain, DiagramMap

logger = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MAX_BACKTRACKS = 40


class Status(enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    STEP_FAILURE = "step_failure"
    SKIPPED = "skipped"
    NO_PROGRESS = "no_progress"


@dataclass
class OptimOptions:
    max_iters: int = 200
    grad_tol: float = 1e-10
    step_tol: float = 1e-12
    memory: int = 10
    f_tol: float = 0.0  # relative decrease below which a step counts as stalled; 0 disables

    def __post_init__(self):
        if self.max_iters < 1 or self.memory < 1:
            raise ValueError("max_iters and memory must be positive")
        if self.grad_tol < 0 or self.step_tol < 0 or self.f_tol < 0:
            raise ValueError("tolerances must be non-negative")


@dataclass
class OptimResult:
    x_star: np.ndarray
    f_star: float
    status: Status
    iterations: int
    evals: int
    history: list = field(default_factory=list, repr=False)

    @property
    def success(self) -> bool:
        return self.status in (Status.CONVERGED, Status.MAX_ITERS)


@dataclass
class BatchOptimResult:
    x_star: np.ndarray  # (B, N)
    f_star: np.ndarray  # (B,)
    status: np.ndarray  # (B,) of Status
    iterations: np.ndarray
    evals: int

    def __getitem__(self, i) -> OptimResult:
        return OptimResult(self.x_star[i], float(self.f_star[i]), self.status[i], int(self.iterations[i]), self.evals)


def _status_array(n: int, value: Status) -> np.ndarray:
    out = np.empty(n, dtype=object)
    out[:] = [value] * n
    return out


def _two_loop(g, S, Y, rho, order, gamma):
    """L-BFGS two-loop recursion applied row-wise; empty slots have ``rho = 0``."""
    q = g.copy()
    alpha = np.zeros((len(g), len(order)))
    for n, k in enumerate(order):  # newest first
        alpha[:, n] = rho[:, k] * np.einsum("ij,ij->i", S[:, k], q)
        q -= alpha[:, n, None] * Y[:, k]
    r = gamma[:, None] * q
    for n in range(len(order) - 1, -1, -1):
        k = order[n]
        beta = rho[:, k] * np.einsum("ij,ij->i", Y[:, k], r)
        r += (alpha[:, n] - beta)[:, None] * S[:, k]
    return r


def minimize_box_batch(
    fun: Callable,
    lower,
    upper,
    X0,
    opts: Optional[OptimOptions] = None,
) -> BatchOptimResult:
    """Minimise ``B`` independent box-constrained problems simultaneously.

    ``fun(X, rows)`` receives the current iterates ``X`` of shape ``(b, N)``
    for the row indices ``rows`` and returns ``(f, G)`` with shapes ``(b,)``
    and ``(b, N)``.  Non-finite values reject a trial step.

    Each row runs a projected L-BFGS iteration: variables held at a bound by
    the gradient are frozen, the quasi-Newton direction on the rest is
    projected onto the box along the search path, and the step is accepted
    under an Armijo sufficient-decrease test.  When the quasi-Newton step
    fails the row falls back to a projected steepest-descent step with a
    fresh memory.
    """
    opts = opts or OptimOptions()
    X = np.array(X0, dtype=float, copy=True)
    if X.ndim != 2:
        raise ValueError("X0 must have shape (B, N)")
    B, N = X.shape
    lo = np.broadcast_to(np.asarray(lower, dtype=float), (B, N))
    hi = np.broadcast_to(np.asarray(upper, dtype=float), (B, N))
    X = np.clip(X, lo, hi)

    status = _status_array(B, Status.MAX_ITERS)
    iters = np.zeros(B, dtype=int)
    all_rows = np.arange(B)
    f, G = fun(X, all_rows)
    f = np.array(f, dtype=float)
    G = np.array(G, dtype=float)
    evals = 1
    bad = ~(np.isfinite(f) & np.all(np.isfinite(G), axis=1))
    status[bad] = Status.STEP_FAILURE
    active = ~bad

    m = opts.memory
    S = np.zeros((B, m, N))
    Yh = np.zeros((B, m, N))
    rho = np.zeros((B, m))
    gamma = np.ones(B)
    fresh = np.ones(B, dtype=bool)
    slot = 0
    filled = 0

    def projected_gradient(Xa, Ga, loa, hia):
        return Xa - np.clip(Xa - Ga, loa, hia)

    for it in range(opts.max_iters):
        rows = np.flatnonzero(active)
        if len(rows) == 0:
            break
        x, g = X[rows], G[rows]
        lo_r, hi_r = lo[rows], hi[rows]
        pg = projected_gradient(x, g, lo_r, hi_r)
        done = np.max(np.abs(pg), axis=1) <= opts.grad_tol
        if done.any():
            status[rows[done]] = Status.CONVERGED
            active[rows[done]] = False
            rows, x, g, lo_r, hi_r = rows[~done], x[~done], g[~done], lo_r[~done], hi_r[~done]
            if len(rows) == 0:
                break
        iters[rows] += 1

        at_lo = (x <= lo_r) & (g > 0)
        at_hi = (x >= hi_r) & (g < 0)
        free = ~(at_lo | at_hi)
        gf = np.where(free, g, 0.0)
        order = [(slot - 1 - n) % m for n in range(filled)]
        d = -_two_loop(gf, S[rows], Yh[rows], rho[rows], order, gamma[rows]) if filled else -gamma[rows, None] * gf
        d = np.where(free, d, 0.0)
        # steepest descent where the quasi-Newton direction is not a descent direction
        slope = np.einsum("ij,ij->i", d, gf)
        gnorm = np.linalg.norm(gf, axis=1)
        not_descent = ~(slope < -1e-12 * np.linalg.norm(d, axis=1) * gnorm)
        first = fresh[rows]
        sd = not_descent | first
        if sd.any():
            scale = np.where(first, 1.0 / np.maximum(np.max(np.abs(gf), axis=1), 1.0), gamma[rows])
            d[sd] = -(scale[:, None] * gf)[sd]
        d = np.where(((x <= lo_r) & (d < 0)) | ((x >= hi_r) & (d > 0)), 0.0, d)

        x_new, f_new, g_new, ok, ev = _line_search(fun, rows, x, f[rows], g, d, lo_r, hi_r)
        evals += ev
        # rows whose quasi-Newton step failed retry along steepest descent
        retry = ~ok & ~sd
        if retry.any():
            rr = np.flatnonzero(retry)
            d2 = -gf[rr] / np.maximum(np.max(np.abs(gf[rr]), axis=1), 1e-300)[:, None]
            d2 *= np.maximum(np.max(np.abs(x_new[rr] - x[rr]), axis=1, initial=0.0), 1.0)[:, None]
            d2 = np.where(((x[rr] <= lo_r[rr]) & (d2 < 0)) | ((x[rr] >= hi_r[rr]) & (d2 > 0)), 0.0, d2)
            xs, fs, gs, oks, ev = _line_search(fun, rows[rr], x[rr], f[rows[rr]], g[rr], d2, lo_r[rr], hi_r[rr])
            evals += ev
            x_new[rr], f_new[rr], g_new[rr], ok[rr] = xs, fs, gs, oks
            rho[rows[rr]] = 0.0
        failed = ~ok
        if failed.any():
            status[rows[failed]] = Status.STEP_FAILURE
            active[rows[failed]] = False

        good = np.flatnonzero(ok)
        if len(good) == 0:
            continue
        gr = rows[good]
        s = x_new[good] - x[good]
        y = g_new[good] - g[good]
        sy = np.einsum("ij,ij->i", s, y)
        yy = np.einsum("ij,ij->i", y, y)
        valid = (sy > 1e-10 * np.linalg.norm(s, axis=1) * np.sqrt(yy)) & (sy > 1e-200)
        S[gr, slot] = s
        Yh[gr, slot] = y
        rho[gr, slot] = np.where(valid, 1.0 / np.where(valid, sy, 1.0), 0.0)
        gamma[gr] = np.where(valid, sy / np.where(valid, yy, 1.0), gamma[gr])
        fresh[gr] = False
        f_old = f[gr]
        X[gr], f[gr], G[gr] = x_new[good], f_new[good], g_new[good]

        small_step = np.max(np.abs(s), axis=1) <= opts.step_tol
        stalled = np.zeros_like(small_step)
        if opts.f_tol > 0:
            stalled = (f_old - f[gr]) <= opts.f_tol * np.maximum(np.maximum(np.abs(f_old), np.abs(f[gr])), 1.0)
        stop = small_step | stalled
        status[gr[stop]] = Status.CONVERGED
        active[gr[stop]] = False
        slot = (slot + 1) % m
        filled = min(filled + 1, m)

    return BatchOptimResult(X, f, status, iters, evals)


def _line_search(fun, rows, x, f0, g, d, lo, hi):
    """Backtracking Armijo search along the projected path ``P(x + αd)``."""
    b = len(rows)
    alpha = np.ones(b)
    x_out = x.copy()
    f_out = f0.copy()
    g_out = g.copy()
    ok = np.zeros(b, dtype=bool)
    pending = np.flatnonzero(np.any(d != 0, axis=1))
    evals = 0
    for _ in range(MAX_BACKTRACKS):
        if len(pending) == 0:
            break
        xt = np.clip(x[pending] + alpha[pending, None] * d[pending], lo[pending], hi[pending])
        step = xt - x[pending]
        dec = np.einsum("ij,ij->i", g[pending], step)
        ft, gt = fun(xt, rows[pending])
        ft = np.asarray(ft, dtype=float)
        gt = np.asarray(gt, dtype=float)
        evals += 1
        finite = np.isfinite(ft) & np.all(np.isfinite(gt), axis=1)
        accept = finite & (dec < 0) & (ft <= f0[pending] + ARMIJO_C * dec)
        acc = pending[accept]
        x_out[acc], f_out[acc], g_out[acc] = xt[accept], ft[accept], gt[accept]
        ok[acc] = True
        pending = pending[~accept]
        alpha[pending] *= 0.5
    return x_out, f_out, g_out, ok, evals


def minimize_box(fun: Callable, bounds: BoxDomain, x0, opts: Optional[OptimOptions] = None) -> OptimResult:
    """Minimise a smooth ``fun(x) -> (f, grad)`` over the box ``bounds``."""
    x0 = np.asarray(x0, dtype=float).ravel()
    history = []

    def batch_fun(X, rows):
        fx, gx = fun(X[0])
        history.append(float(fx))
        return np.array([fx], dtype=float), np.asarray(gx, dtype=float).reshape(1, -1)

    res = minimize_box_batch(batch_fun, bounds.lower, bounds.upper, x0[None, :], opts)
    r = res[0]
    r.history = history
    return r


# ---------------------------------------------------------------------------
# map inversion


def default_inverse_options() -> OptimOptions:
    return OptimOptions(max_iters=100, grad_tol=1e-10, step_tol=1e-12)


def inverse_sample_batch(dmap: DiagramMap, targets, X0, opts: Optional[OptimOptions] = None, penalty=None):
    """Solve ``min_x ½‖F(x) - c_i‖²`` for every target row ``c_i`` at once.

    ``penalty`` is an optional callable ``(Y, rows) -> (value, dvalue/dY)``
    added to the objective in image space (used for region restriction).
    """
    C = np.atleast_2d(np.asarray(targets, dtype=float))
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    opts = opts or default_inverse_options()

    def fun(X, rows):
        Y, J = dmap.value_and_jacobian(X, on_degenerate="nan")
        r = Y - C[rows]
        f = 0.5 * np.einsum("ij,ij->i", r, r)
        dy = r
        if penalty is not None:
            pv, pg = penalty(Y, rows)
            f = f + pv
            dy = dy + pg
        return f, np.einsum("mi,min->mn", dy, J)

    return minimize_box_batch(fun, dmap.domain.lower, dmap.domain.upper, X0, opts)


def inverse_sample(dmap: DiagramMap, c, x0, opts: Optional[OptimOptions] = None) -> OptimResult:
    """Parameter vector whose image is closest to ``c`` (local search from ``x0``)."""
    return inverse_sample_batch(dmap, np.asarray(c, dtype=float)[None, :], np.asarray(x0)[None, :], opts)[0]


def _pnorm_and_grad(U, p: float):
    """``(Σ|u_i|^p)^{1/p}`` row-wise and its gradient, evaluated without overflow."""
    a = np.abs(U)
    s = a.max(axis=1)
    safe = np.where(s > 0, s, 1.0)
    r = a / safe[:, None]
    val = s * np.sum(r**p, axis=1) ** (1.0 / p)
    vsafe = np.where(val > 0, val, 1.0)
    grad = np.sign(U) * (a / vsafe[:, None]) ** (p - 1)
    grad[val == 0] = 0.0
    return val, grad


def default_recenter_options() -> OptimOptions:
    return OptimOptions(max_iters=300, grad_tol=1e-12, step_tol=1e-14)


RECENTER_PENALTIES = (1e2, 1e4, 1e6)


def recenter_batch(
    dmap: DiagramMap,
    X0,
    p: float = 10,
    opts: Optional[OptimOptions] = None,
    sv_threshold: float = 1e-3,
):
    """Move each sample along its fibre ``{F(x) = F(x0)}`` towards the box centre.

    Returns ``(X, status)``.  Rows whose Jacobian is numerically rank
    deficient, or for which the image cannot be restored to within
    ``1e-6·(1 + ‖F(x0)‖)``, or which would end up farther from the centre in
    the sup-norm, are returned unchanged.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    opts = opts or default_recenter_options()
    dom = dmap.domain
    mid = dom.center
    B = len(X0)
    Y0, J0 = dmap.value_and_jacobian(X0, on_degenerate="nan")
    status = _status_array(B, Status.NO_PROGRESS)
    finite = np.all(np.isfinite(Y0), axis=1)
    smin = np.full(B, 0.0)
    if finite.any():
        smin[finite] = np.linalg.svd(J0[finite], compute_uv=False)[:, -1]
    eligible = finite & (smin > sv_threshold)
    status[~eligible] = Status.SKIPPED
    out = X0.copy()
    rows_e = np.flatnonzero(eligible)
    if len(rows_e) == 0:
        return out, status
    target = Y0[rows_e]
    X = _nudge_along_fiber(dom, X0[rows_e], J0[rows_e])
    for mu in RECENTER_PENALTIES:

        def fun(Xr, rows, mu=mu):
            Y, J = dmap.value_and_jacobian(Xr, on_degenerate="nan")
            r = Y - target[rows]
            pv, pg = _pnorm_and_grad(Xr - mid, p)
            f = mu * np.einsum("ij,ij->i", r, r) + pv
            g = 2.0 * mu * np.einsum("mi,min->mn", r, J) + pg
            return f, g

        X = minimize_box_batch(fun, dom.lower, dom.upper, X, opts).x_star
    X = restore_fiber(dmap, X, target)
    Y = dmap.evaluate(X, on_degenerate="nan")
    err = np.linalg.norm(Y - target, axis=1)
    tol = 1e-6 * (1.0 + np.linalg.norm(target, axis=1))
    closer = np.max(np.abs(X - mid), axis=1) <= np.max(np.abs(X0[rows_e] - mid), axis=1) + 1e-8
    good = (err <= tol) & closer
    out[rows_e[good]] = X[good]
    status[rows_e[good]] = Status.CONVERGED
    return out, status


def _nudge_along_fiber(dom: BoxDomain, X, J, size: float = 1e-3) -> np.ndarray:
    """Small first-order fibre-preserving move off symmetric saddle points.

    The p-norm objective restricted to a fibre can be stationary at a
    symmetric starting point (e.g. an off-diagonal entry at exactly 0).
    """
    rng = np.random.default_rng(0)
    _, _, Vt = np.linalg.svd(J)
    null = Vt[:, J.shape[1]:, :]  # (B, N - 2, N)
    if null.shape[1] == 0:
        return X.copy()
    xi = rng.standard_normal((len(X), null.shape[1]))
    v = np.einsum("bk,bkn->bn", xi, null)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return dom.clip(X + size * (dom.upper - dom.lower) * v)


def restore_fiber(dmap: DiagramMap, X, target, iters: int = 20) -> np.ndarray:
    """Gauss–Newton minimum-norm corrections pulling ``F(X)`` back onto ``target``."""
    X = X.copy()
    dom = dmap.domain
    for _ in range(iters):
        Y, J = dmap.value_and_jacobian(X, on_degenerate="nan")
        r = Y - target
        if not np.all(np.isfinite(r)):
            break
        if np.max(np.linalg.norm(r, axis=1)) < 1e-14:
            break
        step = np.einsum("mni,mi->mn", np.linalg.pinv(J, rcond=1e-10), r)
        X = dom.clip(X - step)
    return X


def recenter(dmap: DiagramMap, x0, p: float = 10, opts: Optional[OptimOptions] = None, sv_threshold: float = 1e-3):
    """Single-sample :func:`recenter_batch`; returns an :class:`OptimResult`."""
    X, status = recenter_batch(dmap, np.asarray(x0, dtype=float)[None, :], p, opts, sv_threshold)
    x = X[0]
    f = float(_pnorm_and_grad((x - dmap.domain.center)[None, :], p)[0][0])
    return OptimResult(x, f, status[0], 0, 0)
