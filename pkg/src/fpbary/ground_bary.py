"""Pointwise minimisers of weighted sums of ground costs.

Gaussians are stored as flat vectors ``[mean, vec(cov)]`` of length
``g + g*g`` so that they can sit in a :class:`~fpbary.core.DiscreteMeasure`
like ordinary points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    BURES,
    CIRCLE_PROJECTION,
    LINEAR_PROJECTION,
    NORM_POWER,
    SQEUCLIDEAN,
    CostSpec,
    ShapeError,
    total_cost_rows,
    total_grad_rows,
)

EIG_FLOOR = 1e-14
SPD_MIN_EIG = 1e-12


class SingularGroundError(np.linalg.LinAlgError):
    """The normal equations of a quadratic ground problem are rank deficient."""


# --------------------------------------------------------------------------
# Gaussian helpers


def pack_gaussians(means, covs) -> np.ndarray:
    """Stack means ``(n, g)`` and covariances ``(n, g, g)`` into ``(n, g + g*g)``."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    covs = np.asarray(covs, dtype=float).reshape(means.shape[0], means.shape[1], means.shape[1])
    return np.concatenate([means, covs.reshape(means.shape[0], -1)], axis=1)


def unpack_gaussians(X, g: int):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[-1] != g + g * g:
        raise ShapeError(f"flat Gaussian rows need {g + g * g} entries, got {X.shape[-1]}")
    means = X[..., :g]
    covs = X[..., g:].reshape(X.shape[:-1] + (g, g))
    return means, 0.5 * (covs + np.swapaxes(covs, -1, -2))


def check_spd(S, name="covariance"):
    S = np.asarray(S, dtype=float)
    if S.ndim < 2 or S.shape[-1] != S.shape[-2]:
        raise ShapeError(f"{name} must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError(f"{name} has non-finite entries")
    asym = np.abs(S - np.swapaxes(S, -1, -2)).max(initial=0.0)
    if asym > 1e-12 * max(1.0, np.abs(S).max(initial=0.0)):
        raise ValueError(f"{name} is not symmetric (max asymmetry {asym:.3e})")
    w = np.linalg.eigvalsh(0.5 * (S + np.swapaxes(S, -1, -2)))
    if w.min(initial=np.inf) <= SPD_MIN_EIG:
        raise ValueError(f"{name} is not positive definite (min eigenvalue {w.min():.3e})")
    return S


def sqrtm_spd(S: np.ndarray, inverse: bool = False):
    """Batched symmetric square root (and optionally its inverse)."""
    w, V = np.linalg.eigh(0.5 * (S + np.swapaxes(S, -1, -2)))
    r = np.sqrt(np.maximum(w, EIG_FLOOR))
    root = (V * r[..., None, :]) @ np.swapaxes(V, -1, -2)
    if not inverse:
        return root
    inv = (V / r[..., None, :]) @ np.swapaxes(V, -1, -2)
    return root, inv


def _trace_sqrt(A: np.ndarray) -> np.ndarray:
    """``tr(A^{1/2})`` for symmetric PSD ``A`` (batched)."""
    w = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))
    return np.sqrt(np.maximum(w, 0.0)).sum(axis=-1)


def _bures_pairs(m1, S1, m2, S2, R1=None):
    if R1 is None:
        R1 = sqrtm_spd(S1)
    mid = R1 @ S2 @ R1
    val = (
        ((m1 - m2) ** 2).sum(-1)
        + np.trace(S1, axis1=-2, axis2=-1)
        + np.trace(S2, axis1=-2, axis2=-1)
        - 2.0 * _trace_sqrt(mid)
    )
    return np.maximum(val, 0.0)


def gaussian_w2(g1, g2) -> float:
    """Squared 2-Wasserstein distance between ``(mean, cov)`` pairs."""
    m1, S1 = np.asarray(g1[0], dtype=float).ravel(), np.asarray(g1[1], dtype=float)
    m2, S2 = np.asarray(g2[0], dtype=float).ravel(), np.asarray(g2[1], dtype=float)
    if m1.shape != m2.shape or S1.shape != S2.shape or S1.shape != (m1.size, m1.size):
        raise ShapeError("Gaussians must share the same dimension")
    check_spd(S1, "first covariance")
    check_spd(S2, "second covariance")
    if np.array_equal(m1, m2) and np.array_equal(S1, S2):
        return 0.0
    return float(_bures_pairs(m1, S1, m2, S2))


def bures_cost_rows(X, Y, g: int) -> np.ndarray:
    """Row-wise squared W2 between flat Gaussians ``X[i]`` and ``Y[i]``."""
    m1, S1 = unpack_gaussians(X, g)
    m2, S2 = unpack_gaussians(Y, g)
    out = _bures_pairs(m1, S1, m2, S2)
    out[np.all(X == Y, axis=1)] = 0.0
    return out


def bures_cost_matrix(X, Y, g: int) -> np.ndarray:
    """Matrix of squared W2 between flat Gaussians."""
    m1, S1 = unpack_gaussians(X, g)
    m2, S2 = unpack_gaussians(Y, g)
    R1 = sqrtm_spd(S1)
    out = _bures_pairs(
        m1[:, None], S1[:, None], m2[None, :], S2[None, :], R1=R1[:, None]
    )
    same = np.all(X[:, None, :] == Y[None, :, :], axis=2)
    out[same] = 0.0
    return out


def bures_map(S: np.ndarray, covs: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """One fixed-point step ``S -> S^{-1/2} (sum_k lam_k (S^{1/2} S_k S^{1/2})^{1/2})^2 S^{-1/2}``.

    ``S`` has shape ``(..., g, g)``, ``covs`` ``(..., K, g, g)`` and ``lam``
    ``(..., K)``.
    """
    R, Rinv = sqrtm_spd(S, inverse=True)
    inner = sqrtm_spd(R[..., None, :, :] @ covs @ R[..., None, :, :])
    T = (lam[..., None, None] * inner).sum(axis=-3)
    out = Rinv @ T @ T @ Rinv
    return 0.5 * (out + np.swapaxes(out, -1, -2))


@dataclass(frozen=True)
class BuresResult:
    mean: np.ndarray
    cov: np.ndarray
    converged: np.ndarray
    iterations: int
    residual: np.ndarray


def bures_barycentre_batch(means, covs, lam, tol: float = 1e-10, max_iter: int = 200) -> BuresResult:
    """Bures barycentres of many Gaussian tuples at once.

    ``means`` is ``(B, K, g)``, ``covs`` ``(B, K, g, g)``, ``lam`` ``(K,)`` or
    ``(B, K)``.  Each tuple starts from ``sum_k lam_k S_k`` and iterates the
    fixed-point map until the Frobenius displacement drops below ``tol``.
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    B, K = covs.shape[:2]
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (B, K))
    lam = lam / lam.sum(axis=1, keepdims=True)
    mean = np.einsum("bk,bkg->bg", lam, means)
    S = np.einsum("bk,bkij->bij", lam, covs)
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    residual = np.full(B, np.inf)
    active = np.ones(B, dtype=bool)
    it = 0
    while it < max_iter and active.any():
        idx = np.flatnonzero(active)
        new = bures_map(S[idx], covs[idx], lam[idx])
        residual[idx] = np.linalg.norm(new - S[idx], axis=(1, 2))
        S[idx] = new
        active[idx] = residual[idx] >= tol
        it += 1
    return BuresResult(mean, S, ~active, it, residual)


def bures_barycentre(gaussians: Sequence, lam, cfg: "GroundSolverConfig | None" = None):
    """Bures-Wasserstein barycentre of ``[(mean, cov), ...]`` with weights ``lam``.

    Returns
    -------
    mean, cov : ndarray
    info : BuresResult
        Holds the convergence flag, iteration count and final displacement.
    """
    cfg = cfg or GroundSolverConfig()
    if len(gaussians) == 0:
        raise ValueError("need at least one Gaussian")
    lam = np.asarray(lam, dtype=float).ravel()
    if lam.shape[0] != len(gaussians) or np.any(lam <= 0):
        raise ValueError("need one positive weight per Gaussian")
    means = np.stack([np.asarray(m, dtype=float).ravel() for m, _ in gaussians])
    covs = np.stack([np.asarray(S, dtype=float) for _, S in gaussians])
    if covs.shape[1:] != (means.shape[1], means.shape[1]):
        raise ShapeError("covariance shapes do not match the means")
    check_spd(covs)
    res = bures_barycentre_batch(means[None], covs[None], lam, cfg.tol, cfg.max_iter)
    return res.mean[0], res.cov[0], res


# --------------------------------------------------------------------------
# generic ground barycentre


@dataclass(frozen=True)
class GroundSolverConfig:
    """Settings for iterative ground barycentres.

    ``step`` is the initial gradient step; ``None`` picks 0.5 when every
    cost is quadratic and 0.1 otherwise.  ``init`` is ``"mean"`` (weighted
    mean of the targets, or the least-squares point for projections) or
    ``"warm"`` (caller-supplied start, falling back to ``"mean"``).
    """

    max_iter: int = 200
    step: float | None = None
    tol: float = 1e-10
    init: str = "warm"

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.init not in ("mean", "warm"):
            raise ValueError(f"unknown init rule {self.init!r}")


@dataclass(frozen=True)
class GroundResult:
    x: np.ndarray
    converged: bool
    iterations: int


def _is_quadratic(c: CostSpec) -> bool:
    return (
        c.kind == SQEUCLIDEAN
        or (c.kind == NORM_POWER and c.p == 2 and c.q == 2)
        or (c.kind == LINEAR_PROJECTION and c.q == 2)
    )


def _proj_matrix(c: CostSpec, d: int) -> np.ndarray:
    return c.P if c.kind == LINEAR_PROJECTION else np.eye(d)


def _normal_equations(costs, Ys, d):
    A = np.zeros((d, d))
    rhs = np.zeros((Ys[0].shape[0], d))
    for c, Y in zip(costs, Ys):
        P = _proj_matrix(c, d)
        A += c.weight * P.T @ P
        rhs += c.weight * Y @ P
    return A, rhs


def _solve_normal(costs, Ys, d):
    A, rhs = _normal_equations(costs, Ys, d)
    rank = np.linalg.matrix_rank(A)
    if rank < d:
        raise SingularGroundError(
            f"normal equations are rank deficient (rank {rank} < {d}); add a regulariser or more projections"
        )
    return np.linalg.solve(A, rhs.T).T


def _ambient_dim(costs, Ys):
    dims = {c.x_dim for c in costs if c.x_dim is not None}
    if len(dims) > 1:
        raise ShapeError(f"costs disagree on ambient dimension: {sorted(dims)}")
    return dims.pop() if dims else Ys[0].shape[1]


def _weighted_median(vals: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Midpoint of the weighted median interval, column by column."""
    order = np.argsort(vals, axis=1, kind="stable")
    v = np.take_along_axis(vals, order, axis=1)
    cw = np.cumsum(w[order], axis=1)
    half = 0.5 * w.sum()
    lo = np.argmax(cw >= half - 1e-15, axis=1)
    hi = np.argmax(cw > half + 1e-15, axis=1)
    rows = np.arange(vals.shape[0])
    return 0.5 * (v[rows, lo] + v[rows, hi])


def _initial_point(costs, Ys, d):
    try:
        quad = [
            CostSpec(LINEAR_PROJECTION, c.weight, q=2, P=c.P) if c.kind == LINEAR_PROJECTION
            else CostSpec(SQEUCLIDEAN, c.weight)
            for c in costs
        ]
        if all(c.kind != CIRCLE_PROJECTION for c in costs):
            return _solve_normal(quad, Ys, d)
    except SingularGroundError:
        pass
    lam = np.array([c.weight for c in costs])
    same = [k for k, Y in enumerate(Ys) if Y.shape[1] == d]
    if same:
        w = lam[same] / lam[same].sum()
        return sum(wk * Ys[k] for wk, k in zip(w, same))
    return np.zeros((Ys[0].shape[0], d))


def _descend(costs, Ys, X, cfg, step0):
    """Batched gradient descent with Barzilai-Borwein steps and Armijo backtracking."""
    R = X.shape[0]
    f = total_cost_rows(costs, X, Ys)
    G = total_grad_rows(costs, X, Ys)
    step = np.full(R, step0)
    active = np.ones(R, dtype=bool)
    converged = np.zeros(R, dtype=bool)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            it -= 1
            break
        g = G[idx]
        gn2 = np.einsum("ij,ij->i", g, g)
        zero = gn2 == 0.0
        t = step[idx].copy()
        x_old = X[idx]
        accepted = zero.copy()
        x_new = x_old.copy()
        f_new = f[idx].copy()
        pending = ~accepted
        for _ in range(60):
            if not pending.any():
                break
            p = np.flatnonzero(pending)
            cand = x_old[p] - t[p, None] * g[p]
            fc = total_cost_rows(costs, cand, [Y[idx[p]] for Y in Ys])
            ok = fc <= f[idx[p]] - 1e-4 * t[p] * gn2[p]
            good = p[ok]
            x_new[good] = cand[ok]
            f_new[good] = fc[ok]
            accepted[good] = True
            t[p[~ok]] *= 0.5
            pending = ~accepted
        # rows that cannot decrease any further are stationary to working precision
        stalled = ~accepted
        disp = np.sqrt(np.einsum("ij,ij->i", x_new - x_old, x_new - x_old))
        g_new = total_grad_rows(costs, x_new, [Y[idx] for Y in Ys])
        s = x_new - x_old
        yv = g_new - g
        sy = np.einsum("ij,ij->i", s, yv)
        ss = np.einsum("ij,ij->i", s, s)
        bb = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), 2.0 * t)
        step[idx] = np.clip(bb, 1e-12, 1e12)
        X[idx] = x_new
        f[idx] = f_new
        G[idx] = g_new
        done = zero | stalled | (accepted & (disp < cfg.tol))
        converged[idx[done]] = True
        active[idx[done]] = False
    return X, converged, it


def ground_barycentre_rows(
    costs: Sequence[CostSpec],
    Ys: Sequence[np.ndarray],
    cfg: GroundSolverConfig | None = None,
    X0: np.ndarray | None = None,
):
    """Minimise ``sum_k c_k(x, Ys[k][r])`` independently for every row ``r``.

    Returns
    -------
    X : ndarray, shape (R, d)
    converged : ndarray of bool, shape (R,)
    """
    X, converged, _ = _ground_rows(costs, Ys, cfg or GroundSolverConfig(), X0)
    return X, converged


def _ground_rows(costs, Ys, cfg, X0):
    costs = list(costs)
    Ys = [np.atleast_2d(np.asarray(Y, dtype=float)) for Y in Ys]
    if len(costs) != len(Ys) or not costs:
        raise ShapeError(f"{len(costs)} costs for {len(Ys)} target blocks")
    R = Ys[0].shape[0]
    if any(Y.shape[0] != R for Y in Ys):
        raise ShapeError("target blocks must have the same number of rows")
    kinds = {c.kind for c in costs}

    if BURES in kinds:
        if kinds != {BURES} or len({c.gauss_dim for c in costs}) != 1:
            raise ValueError("Gaussian costs cannot be mixed with other cost kinds")
        g = costs[0].gauss_dim
        parts = [unpack_gaussians(Y, g) for Y in Ys]
        means = np.stack([m for m, _ in parts], axis=1)
        covs = np.stack([S for _, S in parts], axis=1)
        lam = np.array([c.weight for c in costs])
        res = bures_barycentre_batch(means, covs, lam, cfg.tol, cfg.max_iter)
        return pack_gaussians(res.mean, res.cov), res.converged, res.iterations

    d = _ambient_dim(costs, Ys)
    for c, Y in zip(costs, Ys):
        c.check_dims(d, Y.shape[1])

    if all(_is_quadratic(c) for c in costs):
        return _solve_normal(costs, Ys, d), np.ones(R, dtype=bool), 0
    if all(c.kind == NORM_POWER and c.p == 1 and c.q == 1 for c in costs):
        lam = np.array([c.weight for c in costs])
        stacked = np.stack(Ys, axis=2)  # (R, d, K)
        X = np.stack([_weighted_median(stacked[:, i, :], lam) for i in range(d)], axis=1)
        return X, np.ones(R, dtype=bool), 0

    if X0 is not None and cfg.init == "warm":
        X = np.array(X0, dtype=float, copy=True).reshape(R, d)
    else:
        X = _initial_point(costs, Ys, d)
    step0 = cfg.step if cfg.step is not None else 0.1
    # a single target with zero self-cost is its own minimiser; costs are
    # nonnegative, and for circles this picks the point on the circle out of
    # the whole ray of minimisers
    exact = np.zeros(R, dtype=bool)
    if len(costs) == 1 and Ys[0].shape[1] == d:
        exact = total_cost_rows(costs, Ys[0], Ys) <= 1e-14 * (1.0 + np.einsum("ij,ij->i", Ys[0], Ys[0]))
        X[exact] = Ys[0][exact]
    if exact.all():
        return X, exact, 0
    rest = np.flatnonzero(~exact)
    Xr, conv_r, iters = _descend(costs, [Y[rest] for Y in Ys], X[rest], cfg, step0)
    X[rest] = Xr
    converged = exact.copy()
    converged[rest] = conv_r

    # kinks of non-smooth costs sit at the targets, so compare against them
    anchors = [Y for Y in Ys if Y.shape[1] == d]
    if anchors and any(not c.differentiable for c in costs):
        best = total_cost_rows(costs, X, Ys)
        for A in anchors:
            fa = total_cost_rows(costs, A, Ys)
            better = fa < best
            X[better] = A[better]
            best[better] = fa[better]
    return X, converged, iters


def ground_barycentre(
    costs: Sequence[CostSpec],
    Y: Sequence,
    cfg: GroundSolverConfig | None = None,
    x0=None,
) -> GroundResult:
    """Minimiser of ``sum_k weight_k c_k(x, y_k)`` for one point per target.

    Quadratic families use their normal equations, Gaussian costs the Bures
    fixed point, and everything else gradient descent from the least-squares
    point (or ``x0``).  A non-converged descent still returns its last iterate
    with ``converged=False``.
    """
    Ys = [np.atleast_2d(np.asarray(y, dtype=float)) for y in Y]
    X0 = None if x0 is None else np.atleast_2d(np.asarray(x0, dtype=float))
    cfg = cfg or GroundSolverConfig()
    X, conv, iters = _ground_rows(costs, Ys, cfg, X0)
    return GroundResult(X[0], bool(conv[0]), int(iters))
