"""Fixed-point iterations for free-support barycentres.

Three maps are provided:

* ``G``: glue the K optimal plans into a multi-coupling, push its target
  marginal forward by the ground barycentre map.  Support may grow.
* ``H``: move every support point to the ground barycentre of its K
  barycentric projections.  Support size and weights are fixed.
* ``G_epsilon``: like ``G`` with Sinkhorn plans and product gluing.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .core import BURES, BarycentreProblem, CostSpec, DiscreteMeasure, cost_matrix
from .gluing import marginalize_targets, nwc_glue, product_glue
from .ground_bary import (
    GroundSolverConfig,
    bures_barycentre_batch,
    ground_barycentre_rows,
    unpack_gaussians,
    bures_cost_rows,
)
from .ot_solver import TransportPlan, solve_entropic, solve_exact

VARIANTS = ("G", "H", "G_epsilon")
GLUINGS = ("nwc", "product")
MERGE_TOL = 1e-9


@dataclass(frozen=True)
class FixedPointConfig:
    """Settings for :func:`run`.

    ``gluing`` defaults to ``nwc`` for ``G`` and must be ``product`` for the
    entropic variant.  ``prune_floor`` drops product-glued tuples whose mass
    is below it (entropic variant only).  ``jobs > 1`` solves the K transport
    problems of an iteration on a thread pool.
    """

    variant: str = "G"
    epsilon: float | None = None
    gluing: str | None = None
    max_iter: int = 50
    stop_alpha: float = 1e-10
    ground_cfg: GroundSolverConfig = field(default_factory=GroundSolverConfig)
    seed: int = 0
    prune_floor: float = 1e-12
    jobs: int = 1
    sinkhorn_tol: float = 1e-9
    sinkhorn_max_iter: int = 10_000

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.stop_alpha >= 0:
            raise ValueError("stop_alpha must be nonnegative")
        gl = self.gluing
        if self.variant == "G_epsilon":
            if self.epsilon is None or not self.epsilon > 0:
                raise ValueError("the entropic variant needs epsilon > 0")
            if gl not in (None, "product"):
                raise ValueError("the entropic variant only supports product gluing")
            gl = "product"
        elif gl is None:
            gl = "nwc"
        if gl not in GLUINGS:
            raise ValueError(f"gluing must be one of {GLUINGS}, got {gl!r}")
        object.__setattr__(self, "gluing", gl)
        if self.prune_floor < 0:
            raise ValueError("prune_floor must be nonnegative")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


@dataclass
class IterationTrace:
    """Per-iteration record of a fixed-point run.

    ``energies`` and ``support_sizes`` describe ``mu_0 .. mu_t`` (one more
    entry than there are iterations); ``stop_stats`` and ``wall_ms`` describe
    the steps.  ``entropic_energies`` is filled for the entropic variant.
    """

    variant: str
    energies: list = field(default_factory=list)
    support_sizes: list = field(default_factory=list)
    stop_stats: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    entropic_energies: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def to_dict(self) -> dict:
        out = {
            "variant": self.variant,
            "energies": [float(v) for v in self.energies],
            "support_sizes": [int(v) for v in self.support_sizes],
            "stop_stats": [float(v) for v in self.stop_stats],
            "wall_ms": [float(v) for v in self.wall_ms],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }
        if self.entropic_energies:
            out["entropic_energies"] = [float(v) for v in self.entropic_energies]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "IterationTrace":
        return cls(
            variant=d["variant"],
            energies=list(d["energies"]),
            support_sizes=list(d["support_sizes"]),
            stop_stats=list(d["stop_stats"]),
            wall_ms=list(d["wall_ms"]),
            entropic_energies=list(d.get("entropic_energies", [])),
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
        )


# --------------------------------------------------------------------------
# building blocks


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def exact_plans(mu: DiscreteMeasure, problem: BarycentreProblem, jobs: int = 1) -> list:
    """Optimal plans between ``mu`` and every target under its cost."""

    def solve(k):
        nu, c = problem.targets[k], problem.costs[k]
        return solve_exact(mu.weights, nu.weights, cost_matrix(c, mu.points, nu.points))

    return _map(solve, list(range(problem.K)), jobs)


def entropic_plans(mu, problem, epsilon, cfg: FixedPointConfig) -> list:
    def solve(k):
        nu, c = problem.targets[k], problem.costs[k]
        M = cost_matrix(c, mu.points, nu.points)
        return solve_entropic(
            mu.weights, nu.weights, M, epsilon,
            max_iter=cfg.sinkhorn_max_iter, tol=cfg.sinkhorn_tol, raise_on_failure=True,
        )

    return _map(solve, list(range(problem.K)), cfg.jobs)


def _is_gaussian_cost(cost: CostSpec | None) -> bool:
    return cost is not None and cost.kind == BURES


def barycentric_projection(plan: TransportPlan, Y, cost: CostSpec | None = None) -> np.ndarray:
    """Conditional mean of the plan's target given each source row.

    Row ``i`` maps to ``(1/a_i) sum_j pi_ij y_j``.  For Gaussian atoms the
    weighted average is replaced by the weighted Bures barycentre of the
    row's targets.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[0] != plan.shape[1]:
        raise ValueError(f"plan has {plan.shape[1]} columns but {Y.shape[0]} target points were given")
    mass = plan.row_sums()
    if np.any(mass <= 0):
        bad = np.flatnonzero(mass <= 0)
        raise ValueError(f"rows {bad.tolist()} carry no mass, projection undefined")
    if not _is_gaussian_cost(cost):
        out = np.zeros((plan.shape[0], Y.shape[1]))
        np.add.at(out, plan.rows, plan.mass[:, None] * Y[plan.cols])
        return out / mass[:, None]
    g = cost.gauss_dim
    means, covs = unpack_gaussians(Y, g)
    ptr = plan.indptr()
    out = np.empty((plan.shape[0], Y.shape[1]))
    for i in range(plan.shape[0]):
        sl = slice(ptr[i], ptr[i + 1])
        cols = plan.cols[sl]
        res = bures_barycentre_batch(means[cols][None], covs[cols][None], plan.mass[sl])
        out[i, :g] = res.mean[0]
        out[i, g:] = res.cov[0].ravel()
    return out


def _merge_tol_radius(problem) -> float:
    # a W2^2 below the merge tolerance can come from flat coordinates a bit further apart
    return 1e-4 if problem.is_gaussian else MERGE_TOL


def merge_atoms(points: np.ndarray, masses: np.ndarray, problem: BarycentreProblem | None = None):
    """Merge atoms closer than ``1e-9`` (Euclidean, or W2^2 for Gaussians).

    Groups are connected components of the closeness graph; each keeps the
    position of its first member and the summed mass.  Order follows first
    appearance, so the result is deterministic.
    """
    n = points.shape[0]
    if n <= 1:
        return points, masses
    gaussian = problem is not None and problem.is_gaussian
    radius = _merge_tol_radius(problem) if problem is not None else MERGE_TOL
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    if gaussian and pairs.shape[0]:
        g = problem.costs[0].gauss_dim
        d = bures_cost_rows(points[pairs[:, 0]], points[pairs[:, 1]], g)
        pairs = pairs[d < MERGE_TOL]
    if pairs.shape[0] == 0:
        return points, masses
    graph = coo_matrix((np.ones(pairs.shape[0]), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    ncomp, labels = connected_components(graph, directed=False)
    first = np.full(ncomp, n, dtype=np.int64)
    np.minimum.at(first, labels, np.arange(n))
    order = np.argsort(first, kind="stable")
    rank = np.empty(ncomp, dtype=np.int64)
    rank[order] = np.arange(ncomp)
    new_mass = np.bincount(rank[labels], weights=masses, minlength=ncomp)
    return points[first[order]], new_mass


def _push_forward(mu, problem, gamma, ground_cfg):
    rho = marginalize_targets(gamma)
    Ys = [nu.points[rho.index[:, k]] for k, nu in enumerate(problem.targets)]
    # warm start each tuple at the mass-weighted source position that feeds it
    X0 = _tuple_sources(mu, gamma, rho)
    X, _ = ground_barycentre_rows(problem.costs, Ys, ground_cfg, X0)
    pts, mass = merge_atoms(X, rho.mass, problem)
    keep = mass > 0
    return DiscreteMeasure.from_unnormalised(pts[keep], mass[keep])


def _tuple_sources(mu, gamma, rho):
    """Mass-weighted mean source position of each merged target tuple."""
    shape = np.asarray(rho.shape, dtype=np.int64)
    radix = np.ones(len(shape), dtype=np.int64)
    if np.prod(shape.astype(float)) >= 2.0**62:
        return None
    for k in range(len(shape) - 2, -1, -1):
        radix[k] = radix[k + 1] * shape[k + 1]
    pos = np.searchsorted(rho.index @ radix, gamma.index @ radix)
    X0 = np.zeros((rho.nnz, mu.dim))
    np.add.at(X0, pos, gamma.mass[:, None] * mu.points[gamma.rows])
    return X0 / np.maximum(rho.mass, 1e-300)[:, None]


def G_from_plans(mu, problem, plans, cfg: FixedPointConfig) -> DiscreteMeasure:
    if cfg.gluing == "nwc":
        gamma = nwc_glue(plans)
    else:
        floor = cfg.prune_floor if cfg.variant == "G_epsilon" else 0.0
        row_tol = max(1e-10, 10.0 * cfg.sinkhorn_tol) if cfg.variant == "G_epsilon" else 1e-10
        gamma = product_glue(plans, floor=floor, row_tol=row_tol)
    return _push_forward(mu, problem, gamma, cfg.ground_cfg)


def H_from_plans(mu, problem, plans, cfg: FixedPointConfig) -> DiscreteMeasure:
    Ys = [
        barycentric_projection(pl, nu.points, c)
        for pl, nu, c in zip(plans, problem.targets, problem.costs)
    ]
    X, _ = ground_barycentre_rows(problem.costs, Ys, cfg.ground_cfg, mu.points)
    return DiscreteMeasure(X, mu.weights)


def iterate_G(mu: DiscreteMeasure, problem: BarycentreProblem, cfg: FixedPointConfig | None = None) -> DiscreteMeasure:
    """One step of the support-reshaping map with exact plans."""
    cfg = cfg or FixedPointConfig()
    if cfg.variant == "G_epsilon":
        cfg = FixedPointConfig(variant="G", gluing="product", ground_cfg=cfg.ground_cfg, jobs=cfg.jobs)
    return G_from_plans(mu, problem, exact_plans(mu, problem, cfg.jobs), cfg)


def iterate_H(mu: DiscreteMeasure, problem: BarycentreProblem, cfg: FixedPointConfig | None = None) -> DiscreteMeasure:
    """One step of the fixed-support map: weights kept, points moved."""
    cfg = cfg or FixedPointConfig(variant="H")
    return H_from_plans(mu, problem, exact_plans(mu, problem, cfg.jobs), cfg)


def iterate_G_entropic(
    mu: DiscreteMeasure, problem: BarycentreProblem, epsilon: float, cfg: FixedPointConfig | None = None
) -> DiscreteMeasure:
    """One step of the entropic map (Sinkhorn plans, product gluing)."""
    base = cfg or FixedPointConfig(variant="G_epsilon", epsilon=epsilon)
    cfg = FixedPointConfig(
        variant="G_epsilon", epsilon=epsilon, ground_cfg=base.ground_cfg, prune_floor=base.prune_floor,
        jobs=base.jobs, sinkhorn_tol=base.sinkhorn_tol, sinkhorn_max_iter=base.sinkhorn_max_iter,
    )
    plans = entropic_plans(mu, problem, epsilon, cfg)
    return G_from_plans(mu, problem, plans, cfg)


# --------------------------------------------------------------------------
# driver


def default_init(problem: BarycentreProblem, n: int, seed: int = 0) -> DiscreteMeasure:
    """Uniform measure on ``n`` standard normal samples in the ambient space."""
    if n < 1:
        raise ValueError("need at least one initial point")
    rng = np.random.default_rng(seed)
    return DiscreteMeasure.uniform(rng.standard_normal((n, problem.dim)))


def stop_statistic(new: DiscreteMeasure, old: DiscreteMeasure, problem: BarycentreProblem) -> float:
    """Transport cost between consecutive iterates (squared W2 or MW2)."""
    if problem.is_gaussian:
        c = CostSpec(BURES, gauss_dim=problem.costs[0].gauss_dim)
    else:
        c = CostSpec()
    M = cost_matrix(c, new.points, old.points)
    return solve_exact(new.weights, old.weights, M).cost


def run(
    problem: BarycentreProblem,
    cfg: FixedPointConfig | None = None,
    mu0: DiscreteMeasure | None = None,
    callback: Callable[[int, DiscreteMeasure], None] | None = None,
):
    """Iterate the configured map from ``mu0``.

    Stops once ``W2^2(mu_{t+1}, mu_t) < (alpha / N_t) |X_t|_F^2`` or after
    ``max_iter`` steps.  ``callback(t, mu_t)`` sees every iterate including
    the initial one.

    Returns
    -------
    mu : DiscreteMeasure
        Last iterate.
    trace : IterationTrace
    """
    cfg = cfg or FixedPointConfig()
    if mu0 is None:
        mu0 = default_init(problem, 10, cfg.seed)
    if mu0.dim != problem.dim:
        raise ValueError(f"initial measure has dimension {mu0.dim}, problem needs {problem.dim}")
    trace = IterationTrace(variant=cfg.variant)
    mu = mu0
    trace.support_sizes.append(mu.size)
    if callback:
        callback(0, mu)
    plans = exact_plans(mu, problem, cfg.jobs)
    trace.energies.append(sum(p.cost for p in plans))
    eplans = None
    if cfg.variant == "G_epsilon":
        eplans = entropic_plans(mu, problem, cfg.epsilon, cfg)
        trace.entropic_energies.append(sum(p.entropic_cost for p in eplans))
    for t in range(cfg.max_iter):
        t0 = time.perf_counter()
        if cfg.variant == "G":
            new = G_from_plans(mu, problem, plans, cfg)
        elif cfg.variant == "H":
            new = H_from_plans(mu, problem, plans, cfg)
        else:
            new = G_from_plans(mu, problem, eplans, cfg)
        stat = stop_statistic(new, mu, problem)
        thresh = cfg.stop_alpha / mu.size * float(np.sum(mu.points**2))
        trace.wall_ms.append(1e3 * (time.perf_counter() - t0))
        trace.stop_stats.append(stat)
        mu = new
        trace.support_sizes.append(mu.size)
        plans = exact_plans(mu, problem, cfg.jobs)
        trace.energies.append(sum(p.cost for p in plans))
        if cfg.variant == "G_epsilon":
            eplans = entropic_plans(mu, problem, cfg.epsilon, cfg)
            trace.entropic_energies.append(sum(p.entropic_cost for p in eplans))
        trace.iterations = t + 1
        if callback:
            callback(t + 1, mu)
        if stat < thresh:
            trace.converged = True
            break
    return mu, trace
