"""Multi-couplings with prescribed optimal bi-marginals.

Given ``K`` plans ``pi_k in Pi(a, b_k)`` sharing the source weights ``a``,
build a sparse ``gamma`` on ``(i, j_1, ..., j_K)`` whose ``(i, j_k)``
marginal is ``pi_k``.  Two constructions are offered: the greedy
north-west-corner fill and the conditionally independent product.  The full
tensor is never materialised.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .ot_solver import TransportPlan

ROW_TOL = 1e-10
EXHAUST_REL = 1e-15


@dataclass(frozen=True, eq=False)
class MultiCoupling:
    """Sparse ``(K+1)``-way coupling.

    ``rows[e]`` is the source index of entry ``e``, ``index[e]`` its target
    tuple ``(j_1, ..., j_K)`` and ``mass[e] > 0`` its weight.
    """

    rows: np.ndarray
    index: np.ndarray
    mass: np.ndarray
    shape: tuple

    @property
    def K(self) -> int:
        return self.index.shape[1]

    @property
    def nnz(self) -> int:
        return self.mass.shape[0]

    def bimarginal(self, k: int) -> np.ndarray:
        """Dense ``(n, n_k)`` marginal on ``(i, j_k)``."""
        out = np.zeros((self.shape[0], self.shape[k + 1]))
        np.add.at(out, (self.rows, self.index[:, k]), self.mass)
        return out

    def source_marginal(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.mass, minlength=self.shape[0])


@dataclass(frozen=True, eq=False)
class SparseTensor:
    """Masses on distinct index tuples, sorted lexicographically."""

    index: np.ndarray
    mass: np.ndarray
    shape: tuple

    @property
    def nnz(self) -> int:
        return self.mass.shape[0]

    def marginal(self, k: int) -> np.ndarray:
        return np.bincount(self.index[:, k], weights=self.mass, minlength=self.shape[k])


def _check_plans(plans: Sequence[TransportPlan], need_positive_rows=False, row_tol=ROW_TOL):
    if len(plans) == 0:
        raise ValueError("need at least one plan to glue")
    a = np.asarray(plans[0].row_marginal, dtype=float)
    n = a.shape[0]
    for k, pl in enumerate(plans):
        if pl.shape[0] != n or np.abs(pl.row_marginal - a).max() > row_tol:
            raise ValueError(f"plan {k} does not share the common row marginal")
        err = np.abs(pl.row_sums() - a).max()
        if err > row_tol:
            raise ValueError(f"plan {k} has a row whose mass differs from a_i by {err:.3e}")
    if need_positive_rows and np.any(a <= 0):
        bad = [k for k, pl in enumerate(plans) if np.any(pl.row_sums()[a <= 0] > 0)]
        if bad:
            raise ValueError(f"zero source weight with nonzero plan rows in plans {bad}")
    return a


@njit(cache=True)
def _nwc_kernel(a, ptr, cols, mass, out_rows, out_index, out_mass):
    K = ptr.shape[0]
    n = a.shape[0]
    pos = np.empty(K, np.int64)
    rem = mass.copy()
    e = 0
    for i in range(n):
        ai = a[i]
        thr = 1e-15 * ai
        for k in range(K):
            p = ptr[k, i]
            while p < ptr[k, i + 1] and rem[p] <= thr:
                p += 1
            pos[k] = p
        u = ai
        first = e
        while True:
            done = False
            for k in range(K):
                if pos[k] >= ptr[k, i + 1]:
                    done = True
            if done or u <= thr:
                break
            v = np.inf
            for k in range(K):
                if rem[pos[k]] < v:
                    v = rem[pos[k]]
            out_rows[e] = i
            for k in range(K):
                out_index[e, k] = cols[pos[k]]
            out_mass[e] = v
            e += 1
            u -= v
            advanced = False
            for k in range(K):
                p = pos[k]
                rem[p] -= v
                if rem[p] <= thr:
                    p += 1
                    advanced = True
                    while p < ptr[k, i + 1] and rem[p] <= thr:
                        p += 1
                    pos[k] = p
            assert advanced
        # rounding residue goes to the last entry written for this row
        if e > first and u != 0.0 and abs(u) <= 1e-10:
            out_mass[e - 1] += u
    return e


def nwc_glue(plans: Sequence[TransportPlan]) -> MultiCoupling:
    """North-west-corner gluing of plans sharing a source marginal.

    For each source row, walk every plan's row in increasing column order,
    repeatedly assigning the smallest remaining cell mass to the current
    index tuple and advancing every exhausted pointer.

    Parameters
    ----------
    plans : sequence of TransportPlan
        ``K`` plans with identical row marginals.

    Returns
    -------
    MultiCoupling
    """
    a = _check_plans(plans)
    n = a.shape[0]
    K = len(plans)
    ptr = np.empty((K, n + 1), np.int64)
    offset = 0
    cols, masses = [], []
    for k, pl in enumerate(plans):
        # plans are kept sorted by (row, col), which is what the fill needs
        ptr[k] = pl.indptr() + offset
        cols.append(pl.cols)
        masses.append(pl.mass)
        offset += pl.nnz
    cols = np.concatenate(cols).astype(np.int64)
    mass = np.concatenate(masses).astype(float)
    cap = int(mass.shape[0]) + n
    out_rows = np.empty(cap, np.int64)
    out_index = np.empty((cap, K), np.int64)
    out_mass = np.empty(cap)
    e = _nwc_kernel(a, ptr, cols, mass, out_rows, out_index, out_mass)
    shape = (n,) + tuple(pl.shape[1] for pl in plans)
    keep = out_mass[:e] > 0
    return MultiCoupling(out_rows[:e][keep], out_index[:e][keep], out_mass[:e][keep], shape)


def product_glue(
    plans: Sequence[TransportPlan], floor: float = 0.0, row_tol: float = ROW_TOL
) -> MultiCoupling:
    """Conditionally independent gluing.

    ``gamma[i, j_1, ..., j_K] = prod_k pi_k[i, j_k] / a_i^(K-1)``.  Each
    factor is conditioned on the plan's own row sum, so approximately
    feasible plans (Sinkhorn output, row error up to ``row_tol``) still give
    a source marginal of exactly ``a``.  Partial products never increase as
    plans are folded in, so entries below ``floor`` are discarded as soon as
    they appear without losing any tuple that would have ended above it.
    """
    a = _check_plans(plans, need_positive_rows=True, row_tol=row_tol)
    n = a.shape[0]
    rows = np.flatnonzero(a > 0)
    mass = a[rows].copy()
    index = np.empty((rows.shape[0], 0), dtype=np.int64)
    for pl in plans:
        ptr = pl.indptr()
        rs = pl.row_sums()
        deg = np.diff(ptr)
        counts = deg[rows]
        total = int(counts.sum())
        parent = np.repeat(np.arange(rows.shape[0]), counts)
        start = np.repeat(np.cumsum(counts) - counts, counts)
        cell = ptr[rows][parent] + (np.arange(total) - start)
        new_mass = mass[parent] * (pl.mass[cell] / rs[rows[parent]])
        keep = new_mass > floor
        parent, cell = parent[keep], cell[keep]
        rows = rows[parent]
        mass = new_mass[keep]
        index = np.concatenate([index[parent], pl.cols[cell][:, None].astype(np.int64)], axis=1)
    shape = (n,) + tuple(pl.shape[1] for pl in plans)
    return MultiCoupling(rows, index, mass, shape)


def _unique_tuples(index: np.ndarray, shape: Sequence[int]):
    sizes = np.asarray(shape, dtype=np.float64)
    if np.prod(sizes) < 2.0**62:
        radix = np.cumprod(np.concatenate([[1], np.asarray(shape[:0:-1], dtype=np.int64)]))[::-1]
        keys = index @ radix
        ukeys, inv = np.unique(keys, return_inverse=True)
        uniq = np.empty((ukeys.shape[0], index.shape[1]), dtype=np.int64)
        for k, r in enumerate(radix):
            uniq[:, k] = (ukeys // r) % shape[k]
        return uniq, inv.ravel()
    uniq, inv = np.unique(index, axis=0, return_inverse=True)
    return uniq, inv.ravel()


def marginalize_targets(gamma: MultiCoupling) -> SparseTensor:
    """Sum ``gamma`` over the source index, merging equal target tuples."""
    shape = tuple(gamma.shape[1:])
    uniq, inv = _unique_tuples(gamma.index, shape)
    mass = np.bincount(inv, weights=gamma.mass, minlength=uniq.shape[0])
    return SparseTensor(uniq, mass, shape)
