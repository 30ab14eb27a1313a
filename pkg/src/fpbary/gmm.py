"""Barycentres of Gaussian mixtures under the mixture-Wasserstein distance.

A mixture is a discrete measure whose atoms are Gaussians.  Atoms are
flattened to ``[mean, vec(cov)]`` and handled by the generic fixed-point
and multi-marginal code through the ``bures`` cost kind.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import multivariate_normal

from .core import BURES, BarycentreProblem, CostSpec, DiscreteMeasure, cost_matrix
from .fixed_point import FixedPointConfig, run
from .ground_bary import check_spd, pack_gaussians, unpack_gaussians
from .multimarginal import MMConfig, MultiMarginalSolution, solve_mm
from .ot_solver import TransportPlan, solve_exact


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        m = np.atleast_2d(np.asarray(self.means, dtype=float))
        S = np.asarray(self.covariances, dtype=float)
        n, d = m.shape
        if w.shape[0] != n or S.shape != (n, d, d):
            raise ValueError(f"inconsistent mixture shapes: weights {w.shape}, means {m.shape}, covariances {S.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must be a probability vector (sum {w.sum()!r})")
        if not np.all(np.isfinite(m)):
            raise ValueError("means must be finite")
        check_spd(S, "component covariance")
        for arr in (w, m, S):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covariances", S)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(pack_gaussians(self.means, self.covariances), self.weights)

    @classmethod
    def from_measure(cls, mu: DiscreteMeasure, dim: int) -> "GaussianMixture":
        means, covs = unpack_gaussians(mu.points, dim)
        w = mu.weights / mu.weights.sum()
        return cls(w, means, covs)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixture":
        unknown = set(d) - {"weights", "means", "covariances"}
        if unknown:
            raise ValueError(f"unknown mixture keys: {sorted(unknown)}")
        return cls(np.asarray(d["weights"], dtype=float), np.asarray(d["means"], dtype=float),
                   np.asarray(d["covariances"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def load(cls, path) -> "GaussianMixture":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(data)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    def pdf(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for w, m, S in zip(self.weights, self.means, self.covariances):
            out += w * multivariate_normal(m, S).pdf(X)
        return out


def gmm_problem(mixtures, lam) -> BarycentreProblem:
    """Problem over Gaussian atoms with weights ``lam``; zero weights are dropped."""
    lam = np.asarray(lam, dtype=float).ravel()
    if lam.shape[0] != len(mixtures):
        raise ValueError(f"{lam.shape[0]} weights for {len(mixtures)} mixtures")
    dims = {g.dim for g in mixtures}
    if len(dims) != 1:
        raise ValueError(f"mixtures have different dimensions: {sorted(dims)}")
    g = dims.pop()
    keep = [k for k in range(len(mixtures)) if lam[k] > 0]
    lam = lam[keep] / lam[keep].sum()
    targets = [mixtures[k].to_measure() for k in keep]
    costs = [CostSpec(BURES, weight=float(l), gauss_dim=g) for l in lam]
    # rounding in the division must not trip the weight-sum check
    costs[-1] = CostSpec(BURES, weight=float(1.0 - lam[:-1].sum()), gauss_dim=g)
    return BarycentreProblem(targets, costs)


def mw2(mu: GaussianMixture, nu: GaussianMixture) -> tuple[float, TransportPlan]:
    """Mixture-Wasserstein cost: discrete OT with Gaussian W2^2 ground costs."""
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    a, b = mu.to_measure(), nu.to_measure()
    M = cost_matrix(CostSpec(BURES, gauss_dim=mu.dim), a.points, b.points)
    plan = solve_exact(a.weights, b.weights, M)
    return plan.cost, plan


def initial_mixture(mixtures, n: int, seed: int = 0) -> GaussianMixture:
    """``n`` equally weighted components: means drawn from the pooled input
    means, every covariance equal to the average input covariance."""
    if n < 1:
        raise ValueError("need at least one component")
    rng = np.random.default_rng(seed)
    pooled = np.concatenate([g.means for g in mixtures])
    covs = np.concatenate([g.covariances for g in mixtures])
    pick = rng.choice(pooled.shape[0], size=n, replace=n > pooled.shape[0])
    S = covs.mean(axis=0)
    return GaussianMixture(np.full(n, 1.0 / n), pooled[pick], np.repeat(S[None], n, axis=0))


def gmm_barycentre(mixtures, lam, n: int, cfg: FixedPointConfig | None = None, seed: int = 0,
                   init: GaussianMixture | None = None):
    """Fixed-point barycentre of Gaussian mixtures.

    Returns
    -------
    GaussianMixture, IterationTrace
    """
    cfg = cfg or FixedPointConfig(gluing="product")
    problem = gmm_problem(mixtures, lam)
    mu0 = (init or initial_mixture(mixtures, n, seed)).to_measure()
    mu, trace = run(problem, cfg, mu0)
    return GaussianMixture.from_measure(mu, mixtures[0].dim), trace


def gmm_mm_oracle(mixtures, lam, cfg: MMConfig | None = None) -> MultiMarginalSolution:
    """Exact multi-marginal barycentre over Gaussian atoms."""
    return solve_mm(gmm_problem(mixtures, lam), cfg)


def bilinear_weights(s: float, t: float) -> np.ndarray:
    """Weights of the four corners ``(0,0), (1,0), (0,1), (1,1)`` at ``(s, t)``."""
    return np.array([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t])


def density_grid(gmm: GaussianMixture, lo, hi, resolution: int = 64):
    """Mixture density on a regular 2D lattice as ``(x, y, density)`` rows."""
    if gmm.dim != 2:
        raise ValueError("density grids are only defined for 2D mixtures")
    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(lo[1], hi[1], resolution)
    XX, YY = np.meshgrid(xs, ys, indexing="xy")
    pts = np.stack([XX.ravel(), YY.ravel()], axis=1)
    return np.column_stack([pts, gmm.pdf(pts)])


def write_density_csv(path, rows: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "density"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
