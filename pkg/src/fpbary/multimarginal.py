"""Exact multi-marginal linear program, used as a small-instance oracle.

Variables are index tuples ``(j_1, ..., j_K)`` with cost
``C(Y) = sum_k c_k(B(Y), y_k)``.  The LP over couplings of ``b_1 .. b_K`` is
solved by a revised simplex method whose basis is a dense inverse updated
by rank-one eliminations.  The pushforward of the optimal coupling by the
ground barycentre map is an exact barycentre.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .core import BarycentreProblem, DiscreteMeasure
from .fixed_point import FixedPointConfig, default_init, merge_atoms, run
from .gluing import SparseTensor
from .ground_bary import GroundSolverConfig, ground_barycentre_rows
from .ot_solver import ConvergenceError

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 1_000_000
CHUNK = 65_536


class BudgetExceeded(ValueError):
    """The tuple grid is larger than the configured LP budget."""


@dataclass(frozen=True)
class MMConfig:
    budget: int = DEFAULT_BUDGET
    ground_cfg: GroundSolverConfig = field(default_factory=GroundSolverConfig)
    refactor_every: int = 50
    max_iter: int | None = None


@dataclass(frozen=True, eq=False)
class MultiMarginalSolution:
    """Optimal coupling over target tuples, its value and barycentre."""

    coupling: SparseTensor
    objective: float
    barycentre: DiscreteMeasure
    iterations: int = 0


def tuple_count(problem: BarycentreProblem) -> int:
    return int(np.prod([nu.size for nu in problem.targets], dtype=np.float64))


def _unravel(flat, shape):
    return np.stack(np.unravel_index(flat, shape), axis=1)


def tuple_barycentres(problem, index, cfg: GroundSolverConfig):
    Ys = [nu.points[index[:, k]] for k, nu in enumerate(problem.targets)]
    X, _ = ground_barycentre_rows(problem.costs, Ys, cfg)
    return X, Ys


def tuple_costs(problem: BarycentreProblem, cfg: GroundSolverConfig) -> np.ndarray:
    """``C[j_1, ..., j_K]`` on the full grid, computed in chunks."""
    shape = tuple(nu.size for nu in problem.targets)
    N = int(np.prod(shape))
    C = np.empty(N)
    for s in range(0, N, CHUNK):
        idx = _unravel(np.arange(s, min(N, s + CHUNK)), shape)
        X, Ys = tuple_barycentres(problem, idx, cfg)
        C[s : s + idx.shape[0]] = sum(c.value(X, Y) for c, Y in zip(problem.costs, Ys))
    return C.reshape(shape)


def _row_layout(shape):
    """Row offsets: block 0 keeps all rows, later blocks drop their last row."""
    offsets = [0]
    for k, n in enumerate(shape[:-1]):
        offsets.append(offsets[-1] + (n if k == 0 else n - 1))
    m = offsets[-1] + (shape[-1] if len(shape) == 1 else shape[-1] - 1)
    return np.array(offsets), m


def _column(t, offsets, shape, m):
    col = np.zeros(m)
    for k, j in enumerate(t):
        if k == 0 or j < shape[k] - 1:
            col[offsets[k] + j] = 1.0
    return col


def _staircase(bs, shape):
    """North-west-corner basis: ``m`` tuples, one pointer advanced per step."""
    K = len(shape)
    rem = [b.copy() for b in bs]
    pos = [0] * K
    steps = sum(shape) - K + 1
    tuples, vals = [], []
    for _ in range(steps):
        v = min(rem[k][pos[k]] for k in range(K))
        v = max(v, 0.0)
        tuples.append(tuple(pos))
        vals.append(v)
        for k in range(K):
            rem[k][pos[k]] -= v
        movable = [k for k in range(K) if pos[k] < shape[k] - 1]
        if not movable:
            break
        # advance the most exhausted pointer, lowest block on ties
        k_adv = min(movable, key=lambda k: (rem[k][pos[k]], k))
        pos[k_adv] += 1
    return np.array(tuples, dtype=np.int64), np.array(vals)


def _lex_min_rows(W, d, cand, tol=1e-12):
    """Rows of ``W / d`` that are lexicographically smallest."""
    for j in range(W.shape[1]):
        if cand.size == 1:
            break
        v = W[:, j] / d
        keep = v <= v.min() + tol
        W, d, cand = W[keep], d[keep], cand[keep]
    return cand


def _simplex(C: np.ndarray, bs, cfg: MMConfig):
    """Revised simplex on the K-block transportation polytope.

    Entering tuples follow Dantzig's rule (lowest flat index on ties).  The
    leaving row is chosen lexicographically with respect to the starting
    basis, which is the symbolic right-hand-side perturbation argument and
    rules out cycling on these highly degenerate problems.
    """
    shape = C.shape
    K = len(shape)
    offsets, m = _row_layout(shape)
    rhs = np.concatenate([bs[0]] + [b[:-1] for b in bs[1:]])
    basis_t, xB = _staircase(bs, shape)
    strides = np.array([int(np.prod(shape[k + 1 :])) for k in range(K)], dtype=np.int64)
    basis = basis_t @ strides
    Bmat = np.stack([_column(t, offsets, shape, m) for t in basis_t], axis=1)
    Binv = np.linalg.inv(Bmat)
    Cflat = C.ravel()
    scale = float(np.abs(Cflat).max()) if Cflat.size else 0.0
    rc_tol = 1e-12 * max(scale, 1e-300) * m
    piv_tol = 1e-11
    zero_tol = 1e-14
    max_iter = cfg.max_iter or 100 * m * K + 10_000
    B0 = Bmat.copy()
    it = 0
    while True:
        if it >= max_iter:
            raise ConvergenceError(f"multi-marginal simplex hit its pivot budget ({max_iter})")
        y = Cflat[basis] @ Binv
        red = C.copy()
        for k in range(K):
            yk = y[offsets[k] : offsets[k] + (shape[k] if k == 0 else shape[k] - 1)]
            if k > 0:
                yk = np.concatenate([yk, [0.0]])
            sh = [1] * K
            sh[k] = shape[k]
            red = red - yk.reshape(sh)
        red = red.ravel()
        q = int(np.argmin(red))
        if red[q] >= -rc_tol:
            break
        col = _column(np.unravel_index(q, shape), offsets, shape, m)
        d = Binv @ col
        pos = np.flatnonzero(d > piv_tol)
        if pos.size == 0:
            raise AssertionError("unbounded direction in a bounded transportation polytope")
        ratios = np.maximum(xB[pos], 0.0) / d[pos]
        theta = ratios.min()
        cand = pos[ratios <= theta + zero_tol]
        if cand.size > 1:
            cand = _lex_min_rows(Binv[cand] @ B0, d[cand], cand)
        r = int(cand[np.argmin(basis[cand])])
        theta = max(xB[r], 0.0) / d[r]
        xB = xB - theta * d
        xB[r] = theta
        xB[np.abs(xB) < zero_tol] = 0.0
        basis[r] = q
        row_r = Binv[r] / d[r]
        Binv -= np.outer(d, row_r)
        Binv[r] = row_r
        it += 1
        if it % cfg.refactor_every == 0:
            Bmat = np.stack([_column(np.unravel_index(t, shape), offsets, shape, m) for t in basis], axis=1)
            Binv = np.linalg.inv(Bmat)
            xB = Binv @ rhs
            xB[np.abs(xB) < zero_tol] = 0.0
    xB = np.maximum(xB, 0.0)
    return basis, xB, it


def solve_mm(problem: BarycentreProblem, cfg: MMConfig | None = None) -> MultiMarginalSolution:
    """Exact barycentre through the multi-marginal LP.

    Refuses grids with more than ``cfg.budget`` tuples.  The returned
    coupling is an optimal vertex; its pushforward by the ground barycentre
    map (coincident atoms merged) is the barycentre.
    """
    cfg = cfg or MMConfig()
    shape = tuple(nu.size for nu in problem.targets)
    N = tuple_count(problem)
    if N > cfg.budget:
        raise BudgetExceeded(f"{N} tuples exceed the multi-marginal budget of {cfg.budget}")
    bs = [np.asarray(nu.weights, dtype=float) for nu in problem.targets]
    C = tuple_costs(problem, cfg.ground_cfg)
    if problem.K == 1:
        basis, xB, it = np.arange(shape[0]), bs[0].copy(), 0
    else:
        basis, xB, it = _simplex(C, bs, cfg)
    keep = xB > 0
    flat = basis[keep]
    order = np.argsort(flat, kind="stable")
    flat, mass = flat[order], xB[keep][order]
    index = _unravel(flat, shape)
    coupling = SparseTensor(index, mass, shape)
    objective = float(mass @ C.ravel()[flat])
    X, _ = tuple_barycentres(problem, index, cfg.ground_cfg)
    pts, w = merge_atoms(X, mass, problem)
    bary = DiscreteMeasure.from_unnormalised(pts, w)
    bound = sum(shape) - problem.K + 1
    if bary.size > bound:
        logger.warning("barycentre support %d exceeds the extremal bound %d", bary.size, bound)
    return MultiMarginalSolution(coupling, objective, bary, it)


def compare_fp_vs_mm(
    problem: BarycentreProblem,
    fp_cfg: FixedPointConfig | None = None,
    mm_cfg: MMConfig | None = None,
    mu0: DiscreteMeasure | None = None,
    n_init: int | None = None,
    seed: int = 0,
) -> dict:
    """Energy and wall-time ratios of the fixed-point output against the LP.

    The fixed point starts from ``mu0`` or, by default, a uniform measure on
    ``n_init`` (default: first target size) standard normal samples.
    """
    fp_cfg = fp_cfg or FixedPointConfig()
    t0 = time.perf_counter()
    sol = solve_mm(problem, mm_cfg)
    mm_ms = 1e3 * (time.perf_counter() - t0)
    if mu0 is None:
        mu0 = default_init(problem, n_init or problem.targets[0].size, seed)
    t0 = time.perf_counter()
    mu, trace = run(problem, fp_cfg, mu0)
    fp_ms = 1e3 * (time.perf_counter() - t0)
    fp_energy = trace.energies[-1]
    ratio = fp_energy / sol.objective if sol.objective > 0 else (1.0 if fp_energy <= 1e-12 else np.inf)
    return {
        "objective": float(sol.objective),
        "fp_energy": float(fp_energy),
        "energy_ratio": float(ratio),
        "mm_ms": float(mm_ms),
        "fp_ms": float(fp_ms),
        "seed": int(seed),
        "n": int(problem.targets[0].size),
        "d": int(problem.dim),
        "K": int(problem.K),
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2)
