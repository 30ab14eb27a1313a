import json

import numpy as np
import pytest
from scipy.optimize import linprog

from conftest import random_problem
from fpbary.core import BarycentreProblem, CostSpec, DiscreteMeasure, energy
from fpbary.fixed_point import FixedPointConfig
from fpbary.multimarginal import (
    BudgetExceeded,
    MMConfig,
    compare_fp_vs_mm,
    report_json,
    solve_mm,
    tuple_costs,
)
from fpbary.ot_solver import solve_exact


def highs_mm(C, bs):
    shape = C.shape
    N = C.size
    rows = []
    for k, n in enumerate(shape):
        idx = np.unravel_index(np.arange(N), shape)[k]
        A = np.zeros((n, N))
        A[idx, np.arange(N)] = 1.0
        rows.append(A)
    res = linprog(C.ravel(), A_eq=np.vstack(rows), b_eq=np.concatenate(bs), bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def test_two_diracs():
    pb = BarycentreProblem([DiscreteMeasure.uniform([[0.0]]), DiscreteMeasure.uniform([[4.0]])],
                           [CostSpec(weight=0.5), CostSpec(weight=0.5)])
    sol = solve_mm(pb)
    assert sol.objective == pytest.approx(4.0, abs=1e-14)
    assert sol.barycentre.points.tolist() == [[2.0]]


def test_single_target():
    rng = np.random.default_rng(0)
    pb = random_problem(rng, 1, 6, 2, sizes=[6])
    sol = solve_mm(pb)
    nu = pb.targets[0]
    np.testing.assert_allclose(sol.coupling.mass, nu.weights)
    np.testing.assert_allclose(sol.barycentre.points, nu.points)
    assert sol.objective == 0.0


def test_two_targets_reduce_to_pairwise_ot():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pb = random_problem(rng, 2, 8, 3)
        C = tuple_costs(pb, MMConfig().ground_cfg)
        plan = solve_exact(pb.targets[0].weights, pb.targets[1].weights, C)
        assert solve_mm(pb).objective == pytest.approx(plan.cost, abs=1e-10)


def test_lp_matches_highs_and_invariants():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pb = random_problem(rng, 3, 5, 2)
        sol = solve_mm(pb)
        C = tuple_costs(pb, MMConfig().ground_cfg)
        assert sol.objective == pytest.approx(highs_mm(C, [nu.weights for nu in pb.targets]), abs=1e-9)
        for k, nu in enumerate(pb.targets):
            np.testing.assert_allclose(sol.coupling.marginal(k), nu.weights, atol=1e-9)
        assert np.all(sol.coupling.mass > 0)
        assert sol.barycentre.size <= sum(nu.size for nu in pb.targets) - pb.K + 1
        # the objective is the energy of the pushforward, which is a barycentre
        assert energy(pb, sol.barycentre) == pytest.approx(sol.objective, abs=1e-8)


def test_budget_refusal():
    rng = np.random.default_rng(1)
    pb = random_problem(rng, 3, 5, 2, sizes=[5, 5, 5])
    with pytest.raises(BudgetExceeded, match="125"):
        solve_mm(pb, MMConfig(budget=100))


def test_fixed_point_from_mm_barycentre_has_unit_ratio():
    rng = np.random.default_rng(2)
    pb = random_problem(rng, 3, 5, 2)
    sol = solve_mm(pb)
    rep = compare_fp_vs_mm(pb, FixedPointConfig(max_iter=3), mu0=sol.barycentre)
    assert rep["energy_ratio"] == pytest.approx(1.0, abs=1e-8)
    assert set(json.loads(report_json(rep))) == {
        "objective", "fp_energy", "energy_ratio", "mm_ms", "fp_ms", "seed", "n", "d", "K"}


def test_fixed_point_energy_is_bounded_below_by_objective():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        pb = random_problem(rng, 3, 6, 2)
        rep = compare_fp_vs_mm(pb, FixedPointConfig(max_iter=5), seed=seed)
        assert rep["energy_ratio"] >= 1.0 - 1e-9


@pytest.mark.slow
def test_fixed_point_faster_at_size_30():
    rng = np.random.default_rng(3)
    pb = random_problem(rng, 3, 30, 5, sizes=[30, 30, 30], uniform=True)
    rep = compare_fp_vs_mm(pb, FixedPointConfig(max_iter=10))
    assert rep["fp_ms"] < rep["mm_ms"]
