"""Exact and entropic solvers for discrete Kantorovich problems."""

from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

from . import _network_simplex as _ns
from .core import DiscreteMeasure, CostSpec, ShapeError, cost_matrix

logger = logging.getLogger(__name__)

MARGINAL_TOL = 1e-8
# Newton polishing of Sinkhorn potentials is attempted up to this many dual variables
NEWTON_MAX_VARS = 1500
# problems with more cells than this use block pricing instead of full Dantzig
DANTZIG_MAX_CELLS = 2_500
SPLIT_REL = 1e-12


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse coupling between weight vectors ``a`` (rows) and ``b`` (columns).

    Entries are sorted by ``(row, col)`` and all masses are positive.  For
    exact solves ``u, v`` hold a dual pair with ``u_i + v_j <= M_ij``; for
    entropic solves ``kl`` is ``KL(P | a b^T)`` and ``cost`` the linear part.
    """

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    cost: float
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    epsilon: float | None = None
    kl: float | None = None
    residual: float = 0.0
    converged: bool = True
    iterations: int = 0

    @property
    def shape(self):
        return (self.row_marginal.shape[0], self.col_marginal.shape[0])

    @property
    def nnz(self) -> int:
        return self.mass.shape[0]

    @property
    def entropic_cost(self) -> float:
        """Linear cost plus ``epsilon * KL`` (equals ``cost`` for exact plans)."""
        if self.epsilon is None:
            return self.cost
        return self.cost + self.epsilon * self.kl

    def dense(self) -> np.ndarray:
        P = np.zeros(self.shape)
        np.add.at(P, (self.rows, self.cols), self.mass)
        return P

    def indptr(self) -> np.ndarray:
        """CSR row pointer into ``rows/cols/mass``."""
        return np.concatenate([[0], np.cumsum(np.bincount(self.rows, minlength=self.shape[0]))])

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.mass, minlength=self.shape[0])

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.mass, minlength=self.shape[1])

    def is_permutation(self) -> bool:
        """True when ``n == m``, weights uniform and each row holds one cell of mass 1/n."""
        n, m = self.shape
        if n != m or self.nnz != n:
            return False
        tol = 1e-12
        return bool(
            np.all(np.abs(self.row_marginal - 1.0 / n) <= tol)
            and np.all(np.abs(self.col_marginal - 1.0 / n) <= tol)
            and np.all(np.abs(self.mass - 1.0 / n) <= tol)
            and np.unique(self.rows).size == n
            and np.unique(self.cols).size == n
        )

    def permutation(self) -> np.ndarray:
        """``sigma`` with ``sigma[i] = j`` for a permutation plan."""
        if not self.is_permutation():
            raise ValueError("plan is not a permutation")
        sigma = np.empty(self.shape[0], dtype=np.int64)
        sigma[self.rows] = self.cols
        return sigma


def _check_simplex(w, name):
    w = np.ascontiguousarray(w, dtype=float).ravel()
    if w.size == 0 or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError(f"{name} must be a nonempty nonnegative finite vector")
    if abs(w.sum() - 1.0) > MARGINAL_TOL:
        raise ValueError(f"{name} sums to {w.sum()!r}, expected 1")
    return w


def _check_inputs(a, b, M):
    a = _check_simplex(a, "a")
    b = _check_simplex(b, "b")
    M = np.ascontiguousarray(M, dtype=float)
    if M.shape != (a.size, b.size):
        raise ShapeError(f"cost matrix has shape {M.shape}, expected {(a.size, b.size)}")
    if not np.all(np.isfinite(M)):
        raise ValueError("cost matrix has non-finite entries")
    return a, b, M


def _lse(X, axis):
    # scipy's logsumexp carries heavy per-call overhead for the small arrays here
    mx = X.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return np.log(np.exp(X - mx).sum(axis=axis)) + mx.squeeze(axis)


def solve_exact(a, b, M, max_iter: int | None = None, pricing: str = "auto") -> TransportPlan:
    """Extremal optimal plan of ``min_{P in Pi(a, b)} <P, M>``.

    Parameters
    ----------
    a, b : array-like
        Source and target weights on the simplex.
    M : array-like, shape (n, m)
        Finite cost matrix.
    max_iter : int, optional
        Pivot budget; defaults to a generous multiple of ``n * m``.
    pricing : {"auto", "dantzig", "block"}
        Entering-arc rule.  ``auto`` uses full Dantzig pricing up to
        ``DANTZIG_MAX_CELLS`` cells and block search beyond.

    Returns
    -------
    TransportPlan
        A vertex of the transportation polytope with at most ``n + m - 1``
        positive entries, plus an optimal dual pair ``(u, v)``.
    """
    a, b, M = _check_inputs(a, b, M)
    n, m = M.shape
    # the simplex core needs exactly balanced totals
    b = b * (a.sum() / b.sum())
    if pricing == "auto":
        pricing = "dantzig" if n * m <= DANTZIG_MAX_CELLS else "block"
    rule = {"dantzig": _ns.DANTZIG, "block": _ns.BLOCK}[pricing]
    block = max(64, int(np.sqrt(n * m)))
    scale = float(np.abs(M).max()) if M.size else 0.0
    tol = 1e-14 * scale * (n + m)
    if max_iter is None:
        max_iter = 50 * (n + m) * max(n, m) + 1000
    bi, bj, flow, u, v, status, it = _ns.network_simplex(a, b, M, tol, max_iter, rule, block, True)
    if status != _ns.OPTIMAL:
        raise ConvergenceError(f"network simplex hit the pivot budget ({max_iter}) on a {n}x{m} problem")
    # flows this small are rounding left over from marginals that differ in the last ulp
    keep = flow > SPLIT_REL * np.minimum(a[bi], b[bj])
    rows, cols, mass = bi[keep], bj[keep], flow[keep]
    order = np.lexsort((cols, rows))
    rows, cols, mass = rows[order], cols[order], mass[order]
    cost = float(np.dot(mass, M[rows, cols]))
    return TransportPlan(rows, cols, mass, a, b, cost, u=u, v=v, iterations=int(it))


def solve_entropic(
    a,
    b,
    M,
    epsilon: float,
    max_iter: int = 10_000,
    tol: float = 1e-9,
    raise_on_failure: bool = False,
    polish: bool = True,
) -> TransportPlan:
    """Log-domain Sinkhorn for ``min <P, M> + epsilon KL(P | a b^T)``.

    Convergence is declared when the row-marginal residual (max norm) drops
    below ``tol``; column marginals are exact after each half step.  Small
    ``epsilon`` values are reached through a geometric epsilon schedule that
    warm-starts the potentials.  If Sinkhorn stalls on a small problem and
    ``polish`` is set, Newton steps on the dual finish the job.

    Returns
    -------
    TransportPlan
        Dense plan (zero entries from underflow dropped) with ``cost`` the
        linear part, ``kl`` the divergence term, ``residual`` and
        ``converged`` describing the final state.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    a, b, M = _check_inputs(a, b, M)
    n, m = M.shape
    la = np.log(a)
    lb = np.log(b)
    f = np.zeros(n)
    g = np.zeros(m)

    spread = float(M.max() - M.min()) if M.size else 0.0
    schedule = []
    eps = max(spread, epsilon)
    while eps > epsilon:
        schedule.append(eps)
        eps /= 4.0
    schedule.append(epsilon)

    can_polish = polish and n + m <= NEWTON_MAX_VARS
    it = 0
    residual = np.inf
    for stage, eps in enumerate(schedule):
        last = stage == len(schedule) - 1
        budget = max_iter - it if last else min(200, max_iter - it)
        if last and can_polish:
            # Newton converges far faster than a stalled Sinkhorn tail
            budget = min(budget, 100)
        for _ in range(budget):
            f = -eps * _lse(lb[None, :] + (g[None, :] - M) / eps, axis=1)
            g = -eps * _lse(la[:, None] + (f[:, None] - M) / eps, axis=0)
            it += 1
            if it % 10 == 0 or last:
                logP = la[:, None] + lb[None, :] + (f[:, None] + g[None, :] - M) / eps
                residual = float(np.abs(np.exp(_lse(logP, axis=1)) - a).max())
                if residual < tol:
                    break
        if it >= max_iter:
            break

    if can_polish and residual >= tol:
        f, g = _newton_polish(a, b, M, f, g, epsilon, tol)

    logK = (f[:, None] + g[None, :] - M) / epsilon
    logP = la[:, None] + lb[None, :] + logK
    # unconverged duals can overflow; the residual check below reports it
    with np.errstate(over="ignore"):
        P = np.exp(logP)
    residual = float(max(np.abs(P.sum(1) - a).max(), np.abs(P.sum(0) - b).max()))
    converged = residual < tol
    if not converged:
        msg = f"Sinkhorn stopped at residual {residual:.3e} after {it} iterations (eps={epsilon})"
        if raise_on_failure:
            raise ConvergenceError(msg, residual)
        logger.warning(msg)
    rows, cols = np.nonzero(P > 0)
    mass = P[rows, cols]
    lin = float(np.dot(mass, M[rows, cols]))
    kl = float(np.dot(mass, logK[rows, cols]))
    return TransportPlan(
        rows, cols, mass, a, b, lin, u=f, v=g, epsilon=float(epsilon), kl=kl,
        residual=residual, converged=converged, iterations=it,
    )


def _newton_polish(a, b, M, f, g, eps, tol, max_iter=100):
    """Damped Newton ascent on the entropic dual, last column potential pinned."""
    n, m = M.shape
    lab = np.log(a)[:, None] + np.log(b)[None, :]

    def dual(f, g):
        with np.errstate(over="ignore"):
            P = np.exp(lab + (f[:, None] + g[None, :] - M) / eps)
        return float(f @ a + g @ b - eps * P.sum()), P

    D, P = dual(f, g)
    for _ in range(max_iter):
        r, c = P.sum(1), P.sum(0)
        res = max(np.abs(r - a).max(), np.abs(c - b).max())
        if res < 0.1 * tol:
            break
        grad = np.concatenate([a - r, (b - c)[:-1]])
        H = np.zeros((n + m - 1, n + m - 1))
        H[np.arange(n), np.arange(n)] = r
        H[n + np.arange(m - 1), n + np.arange(m - 1)] = c[:-1]
        H[:n, n:] = P[:, :-1]
        H[n:, :n] = P[:, :-1].T
        H /= eps
        H[np.diag_indices_from(H)] += 1e-300 + 1e-14 * np.abs(H).max()
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        df, dg = step[:n], np.concatenate([step[n:], [0.0]])
        t = 1.0
        slope = float(grad @ step)
        while t > 1e-12:
            D_new, P_new = dual(f + t * df, g + t * dg)
            if np.isfinite(D_new) and D_new >= D + 1e-4 * t * slope - 1e-15 * abs(D):
                break
            t *= 0.5
        else:
            break
        f, g, D, P = f + t * df, g + t * dg, D_new, P_new
    return f, g


def w2_squared(mu1: DiscreteMeasure, mu2: DiscreteMeasure) -> float:
    """Exact squared 2-Wasserstein distance between two discrete measures."""
    if mu1.dim != mu2.dim:
        raise ShapeError(f"dimension mismatch: {mu1.dim} vs {mu2.dim}")
    M = cost_matrix(CostSpec(), mu1.points, mu2.points)
    return solve_exact(mu1.weights, mu2.weights, M).cost
