"""Discrete measures, ground costs and barycentre problems.

Every solver in the package consumes the types defined here.  Measures are
weighted point clouds in R^d; Gaussian atoms are stored as flattened
``[mean, vec(cov)]`` rows so the same machinery handles mixtures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

WEIGHT_PRUNE = 1e-15
SUM_TOL = 1e-8

SQEUCLIDEAN = "sqeuclidean"
NORM_POWER = "norm_power"
LINEAR_PROJECTION = "linear_projection"
CIRCLE_PROJECTION = "circle_projection"
BURES = "bures"

COST_KINDS = (SQEUCLIDEAN, NORM_POWER, LINEAR_PROJECTION, CIRCLE_PROJECTION, BURES)


class ShapeError(ValueError):
    """Raised when point dimensions do not match what a cost expects."""


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud ``sum_i w_i delta_{x_i}``.

    Atoms whose weight falls below ``1e-15`` are dropped on construction and
    the remaining weights renormalised.  Weights must already sum to one up
    to ``1e-8``; larger discrepancies are treated as input errors.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.points, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] == 0:
            raise ShapeError(f"points must be a non-empty (n, d) array, got shape {X.shape}")
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != X.shape[0]:
            raise ShapeError(f"{w.shape[0]} weights for {X.shape[0]} points")
        if not np.all(np.isfinite(X)):
            raise ValueError("points contain non-finite coordinates")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        total = w.sum()
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"weights sum to {total!r}, expected 1")
        keep = w >= WEIGHT_PRUNE
        if not np.all(keep):
            X, w = X[keep], w[keep]
            if w.size == 0:
                raise ValueError("all weights were pruned")
        w = w / w.sum()
        X.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", X)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        X = np.asarray(points, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return cls(X, np.full(X.shape[0], 1.0 / X.shape[0]))

    @classmethod
    def from_unnormalised(cls, points, masses) -> "DiscreteMeasure":
        """Build a measure from positive masses of arbitrary total."""
        m = np.asarray(masses, dtype=float)
        return cls(points, m / m.sum())

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_uniform(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.size) <= tol))

    def __repr__(self):
        return f"DiscreteMeasure(n={self.size}, d={self.dim})"


@dataclass(frozen=True, eq=False)
class CostSpec:
    """A ground cost ``weight * c(x, y)``.

    ``kind`` selects the family; the remaining fields parametrise it:

    * ``sqeuclidean``: ``|x - y|_2^2``
    * ``norm_power``: ``|x - y|_p^q`` with ``p >= 1``, ``q > 0``
    * ``linear_projection``: ``|P x - y|_2^q`` with ``q`` in ``{1, 2}``
    * ``circle_projection``: ``|P(x) - y|_2^2`` where ``P`` projects onto the
      circle ``(center, radius)`` in R^2
    * ``bures``: squared 2-Wasserstein distance between Gaussians of
      dimension ``gauss_dim`` stored as flattened ``[mean, vec(cov)]``
    """

    kind: str = SQEUCLIDEAN
    weight: float = 1.0
    p: float = 2.0
    q: float = 2.0
    P: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float = 1.0
    gauss_dim: int | None = None

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if not (self.weight > 0 and np.isfinite(self.weight)):
            raise ValueError(f"cost weight must be positive, got {self.weight}")
        if self.kind == NORM_POWER and not (self.p >= 1 and self.q > 0):
            raise ValueError(f"norm_power needs p >= 1 and q > 0, got p={self.p}, q={self.q}")
        if self.kind == LINEAR_PROJECTION:
            if self.P is None:
                raise ValueError("linear_projection requires a projection matrix P")
            P = np.atleast_2d(np.asarray(self.P, dtype=float))
            P.setflags(write=False)
            object.__setattr__(self, "P", P)
            if self.q not in (1, 2):
                raise ValueError("linear_projection supports q in {1, 2}")
        if self.kind == CIRCLE_PROJECTION:
            c = np.zeros(2) if self.center is None else np.asarray(self.center, dtype=float)
            if c.shape != (2,) or not self.radius > 0:
                raise ValueError("circle_projection needs a 2D center and a positive radius")
            c.setflags(write=False)
            object.__setattr__(self, "center", c)
        if self.kind == BURES and (self.gauss_dim is None or self.gauss_dim < 1):
            raise ValueError("bures cost requires gauss_dim >= 1")

    # -- dimension bookkeeping -------------------------------------------
    @property
    def x_dim(self) -> int | None:
        """Ambient dimension required for ``x`` (None means any)."""
        if self.kind == LINEAR_PROJECTION:
            return self.P.shape[1]
        if self.kind == CIRCLE_PROJECTION:
            return 2
        if self.kind == BURES:
            return self.gauss_dim + self.gauss_dim**2
        return None

    @property
    def y_dim(self) -> int | None:
        if self.kind == LINEAR_PROJECTION:
            return self.P.shape[0]
        return self.x_dim

    @property
    def same_space(self) -> bool:
        """Whether ``x`` and ``y`` live in the same space."""
        return self.kind in (SQEUCLIDEAN, NORM_POWER, BURES) or (
            self.kind == LINEAR_PROJECTION and self.P.shape[0] == self.P.shape[1]
            and np.allclose(self.P, np.eye(self.P.shape[0]))
        )

    @property
    def differentiable(self) -> bool:
        if self.kind == NORM_POWER:
            return self.q > 1
        if self.kind == LINEAR_PROJECTION:
            return self.q == 2
        return self.kind != BURES

    def check_dims(self, dx: int, dy: int):
        if self.x_dim is not None and dx != self.x_dim:
            raise ShapeError(f"{self.kind} cost expects x of dimension {self.x_dim}, got {dx}")
        if self.y_dim is not None and dy != self.y_dim:
            raise ShapeError(f"{self.kind} cost expects y of dimension {self.y_dim}, got {dy}")
        if self.x_dim is None and dx != dy:
            raise ShapeError(f"{self.kind} cost needs equal dimensions, got {dx} and {dy}")

    # -- evaluation ---------------------------------------------------------
    def project(self, X: np.ndarray) -> np.ndarray:
        """Map ambient points to the target space (identity for most kinds)."""
        if self.kind == LINEAR_PROJECTION:
            return X @ self.P.T
        if self.kind == CIRCLE_PROJECTION:
            return circle_project(X, self.center, self.radius)
        return X

    def value(self, X, Y) -> np.ndarray:
        """Row-wise cost ``weight * c(x_i, y_i)`` for paired rows."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        self.check_dims(X.shape[1], Y.shape[1])
        if self.kind == BURES:
            from .ground_bary import bures_cost_rows

            return self.weight * bures_cost_rows(X, Y, self.gauss_dim)
        diff = self.project(X) - Y
        return self.weight * _diff_cost(self, diff)

    def grad(self, X, Y) -> np.ndarray:
        """Row-wise gradient in ``x`` of ``weight * c(x, y)``.

        Non-smooth points get the zero vector (coincident points for
        ``q <= 1`` norm powers, ``P x = y`` for projection with ``q = 1``).
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        self.check_dims(X.shape[1], Y.shape[1])
        kind = self.kind
        if kind == SQEUCLIDEAN:
            return self.weight * 2.0 * (X - Y)
        if kind == NORM_POWER:
            return self.weight * _norm_power_grad(X - Y, self.p, self.q)
        if kind == LINEAR_PROJECTION:
            r = X @ self.P.T - Y
            if self.q == 2:
                return self.weight * 2.0 * r @ self.P
            nr = np.linalg.norm(r, axis=1, keepdims=True)
            g = np.divide(r, nr, out=np.zeros_like(r), where=nr > 0)
            return self.weight * g @ self.P
        if kind == CIRCLE_PROJECTION:
            return self.weight * _circle_grad(X, Y, self.center, self.radius)
        raise NotImplementedError("no Euclidean gradient for the bures cost")

    def matrix(self, X, Y) -> np.ndarray:
        return cost_matrix(self, X, Y)


def circle_project(X: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    V = X - center
    nv = np.linalg.norm(V, axis=1, keepdims=True)
    U = np.empty_like(V)
    ok = nv[:, 0] > 0
    U[ok] = V[ok] / nv[ok]
    U[~ok] = np.eye(X.shape[1])[0]
    return center + radius * U


def _diff_cost(cost: CostSpec, diff: np.ndarray) -> np.ndarray:
    if cost.kind in (SQEUCLIDEAN, CIRCLE_PROJECTION):
        return np.einsum("...i,...i->...", diff, diff)
    if cost.kind == LINEAR_PROJECTION:
        sq = np.einsum("...i,...i->...", diff, diff)
        return sq if cost.q == 2 else np.sqrt(sq)
    # norm power
    p, q = cost.p, cost.q
    if p == 2:
        nrm = np.sqrt(np.einsum("...i,...i->...", diff, diff))
    elif p == 1:
        nrm = np.abs(diff).sum(axis=-1)
    else:
        nrm = (np.abs(diff) ** p).sum(axis=-1) ** (1.0 / p)
    return nrm**q


def _norm_power_grad(D: np.ndarray, p: float, q: float) -> np.ndarray:
    # d/dx_i |x-y|_p^q = q |x-y|_p^(q-p) |x_i-y_i|^(p-1) sign(x_i-y_i)
    A = np.abs(D)
    nrm = (A**p).sum(axis=1) ** (1.0 / p)
    out = np.zeros_like(D)
    ok = nrm > 0
    scale = q * nrm[ok] ** (q - p)
    out[ok] = scale[:, None] * A[ok] ** (p - 1) * np.sign(D[ok])
    return out


def _circle_grad(X, Y, center, radius):
    V = X - center
    nv = np.linalg.norm(V, axis=1)
    P = circle_project(X, center, radius)
    R = 2.0 * (P - Y)
    out = np.zeros_like(X)
    ok = nv > 0
    U = V[ok] / nv[ok, None]
    Rk = R[ok]
    # Jacobian of the projection is radius/|v| (I - u u^T), symmetric
    out[ok] = (radius / nv[ok])[:, None] * (Rk - U * np.einsum("ij,ij->i", U, Rk)[:, None])
    return out


def cost_matrix(cost: CostSpec, X, Y) -> np.ndarray:
    """Matrix of ``weight * c(x_i, y_j)``.

    Parameters
    ----------
    cost : CostSpec
    X : array-like, shape (n, d)
    Y : array-like, shape (m, d')

    Returns
    -------
    M : ndarray, shape (n, m), nonnegative
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    cost.check_dims(X.shape[1], Y.shape[1])
    if cost.kind == BURES:
        from .ground_bary import bures_cost_matrix

        M = cost.weight * bures_cost_matrix(X, Y, cost.gauss_dim)
    elif cost.kind in (SQEUCLIDEAN, CIRCLE_PROJECTION) or (
        cost.kind == LINEAR_PROJECTION and cost.q == 2
    ):
        PX = cost.project(X)
        M = (
            np.einsum("ij,ij->i", PX, PX)[:, None]
            + np.einsum("ij,ij->i", Y, Y)[None, :]
            - 2.0 * PX @ Y.T
        )
        np.maximum(M, 0.0, out=M)
        # exact zeros where rows coincide, the expansion above leaves rounding
        same = M < 1e-12 * (1.0 + M.max(initial=0.0))
        if np.any(same):
            ii, jj = np.nonzero(same)
            D = PX[ii] - Y[jj]
            M[ii, jj] = np.einsum("ij,ij->i", D, D)
        M *= cost.weight
    else:
        PX = cost.project(X)
        M = np.empty((PX.shape[0], Y.shape[0]))
        step = max(1, 2_000_000 // max(1, Y.size))
        for s in range(0, PX.shape[0], step):
            D = PX[s : s + step, None, :] - Y[None, :, :]
            M[s : s + step] = _diff_cost(cost, D)
        M *= cost.weight
    return M


def total_cost(costs: Sequence[CostSpec], x, Y: Sequence) -> float:
    """``sum_k weight_k c_k(x, y_k)`` for a single ambient point ``x``."""
    if len(costs) != len(Y):
        raise ShapeError(f"{len(costs)} costs for {len(Y)} target points")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return float(sum(c.value(x, np.atleast_2d(y))[0] for c, y in zip(costs, Y)))


def total_cost_rows(costs: Sequence[CostSpec], X: np.ndarray, Ys: Sequence[np.ndarray]) -> np.ndarray:
    """Vectorised :func:`total_cost` over rows of ``X`` and of each ``Ys[k]``."""
    out = np.zeros(X.shape[0])
    for c, Yk in zip(costs, Ys):
        out += c.value(X, Yk)
    return out


def total_grad_rows(costs: Sequence[CostSpec], X: np.ndarray, Ys: Sequence[np.ndarray]) -> np.ndarray:
    out = np.zeros_like(X)
    for c, Yk in zip(costs, Ys):
        out += c.grad(X, Yk)
    return out


@dataclass(frozen=True, eq=False)
class BarycentreProblem:
    """Targets ``nu_k`` paired index-wise with costs ``c_k``."""

    targets: tuple
    costs: tuple
    dim: int = field(default=None)

    def __post_init__(self):
        targets = tuple(self.targets)
        costs = tuple(self.costs)
        if not targets:
            raise ValueError("a barycentre problem needs at least one target")
        if len(targets) != len(costs):
            raise ShapeError(f"{len(targets)} targets but {len(costs)} costs")
        lam = np.array([c.weight for c in costs])
        if abs(lam.sum() - 1.0) > 1e-12:
            raise ValueError(f"cost weights sum to {lam.sum()!r}, expected 1")
        dim = self.dim
        if dim is None:
            xs = {c.x_dim for c in costs if c.x_dim is not None}
            if len(xs) > 1:
                raise ShapeError(f"costs disagree on ambient dimension: {sorted(xs)}")
            dim = xs.pop() if xs else targets[0].dim
        for k, (nu, c) in enumerate(zip(targets, costs)):
            if not isinstance(nu, DiscreteMeasure):
                raise TypeError(f"target {k} is not a DiscreteMeasure")
            try:
                c.check_dims(dim, nu.dim)
            except ShapeError as exc:
                raise ShapeError(f"target {k}: {exc}") from None
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "dim", int(dim))

    @property
    def K(self) -> int:
        return len(self.targets)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([c.weight for c in self.costs])

    @property
    def same_space(self) -> bool:
        return all(c.same_space for c in self.costs)

    @property
    def is_gaussian(self) -> bool:
        return all(c.kind == BURES for c in self.costs)


def energy(problem: BarycentreProblem, mu: DiscreteMeasure) -> float:
    """``V(mu) = sum_k T_{c_k}(mu, nu_k)`` with exact transport costs."""
    from .ot_solver import solve_exact

    total = 0.0
    for nu, c in zip(problem.targets, problem.costs):
        M = cost_matrix(c, mu.points, nu.points)
        total += solve_exact(mu.weights, nu.weights, M).cost
    return total
