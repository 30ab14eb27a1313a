"""Free-support optimal-transport barycentres by fixed-point iteration."""

from .core import BarycentreProblem, CostSpec, DiscreteMeasure, ShapeError, cost_matrix, energy, total_cost
from .fixed_point import FixedPointConfig, IterationTrace, iterate_G, iterate_G_entropic, iterate_H, run
from .gluing import MultiCoupling, marginalize_targets, nwc_glue, product_glue
from .ground_bary import GroundSolverConfig, bures_barycentre, gaussian_w2, ground_barycentre
from .multimarginal import MultiMarginalSolution, compare_fp_vs_mm, solve_mm
from .ot_solver import TransportPlan, solve_entropic, solve_exact, w2_squared
from .gmm import GaussianMixture, gmm_barycentre, gmm_mm_oracle, mw2

__all__ = [
    "BarycentreProblem", "CostSpec", "DiscreteMeasure", "ShapeError", "cost_matrix", "energy", "total_cost",
    "FixedPointConfig", "IterationTrace", "iterate_G", "iterate_G_entropic", "iterate_H", "run",
    "MultiCoupling", "marginalize_targets", "nwc_glue", "product_glue",
    "GroundSolverConfig", "bures_barycentre", "gaussian_w2", "ground_barycentre",
    "MultiMarginalSolution", "compare_fp_vs_mm", "solve_mm",
    "TransportPlan", "solve_entropic", "solve_exact", "w2_squared",
    "GaussianMixture", "gmm_barycentre", "gmm_mm_oracle", "mw2",
]
