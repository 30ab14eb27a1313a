import numpy as np
import pytest

from fpbary.gluing import marginalize_targets, nwc_glue, product_glue
from fpbary.ot_solver import TransportPlan, solve_exact


def make_plan(rows, cols, mass, a, b):
    return TransportPlan(np.array(rows), np.array(cols), np.array(mass, dtype=float),
                         np.array(a, dtype=float), np.array(b, dtype=float), 0.0)


def entries(gamma):
    return sorted((int(i), *map(int, t), float(m)) for i, t, m in zip(gamma.rows, gamma.index, gamma.mass))


def random_plans(rng, n_max=20, K_max=5):
    n = int(rng.integers(1, n_max + 1))
    K = int(rng.integers(1, K_max + 1))
    a = rng.dirichlet(np.ones(n))
    plans = []
    for _ in range(K):
        m = int(rng.integers(1, n_max + 1))
        plans.append(solve_exact(a, rng.dirichlet(np.ones(m)), rng.random((n, m))))
    return a, plans


HAND_A = [0.5, 0.5]
HAND_PLANS = [
    make_plan([0, 1], [0, 1], [0.5, 0.5], HAND_A, HAND_A),
    make_plan([0, 0, 1], [0, 1, 1], [0.25, 0.25, 0.5], HAND_A, [0.25, 0.75]),
]
HAND_GAMMA = [(0, 0, 0, 0.25), (0, 0, 1, 0.25), (1, 1, 1, 0.5)]


@pytest.mark.parametrize("glue", [nwc_glue, product_glue])
def test_hand_example(glue):
    gamma = glue(HAND_PLANS)
    assert entries(gamma) == HAND_GAMMA
    rho = marginalize_targets(gamma)
    assert [(*map(int, t), float(m)) for t, m in zip(rho.index, rho.mass)] == [(0, 0, 0.25), (0, 1, 0.25), (1, 1, 0.5)]


@pytest.mark.parametrize("glue", [nwc_glue, product_glue])
def test_single_plan_is_returned_unchanged(glue):
    rng = np.random.default_rng(0)
    a = rng.dirichlet(np.ones(6))
    plan = solve_exact(a, rng.dirichlet(np.ones(4)), rng.random((6, 4)))
    gamma = glue([plan])
    assert gamma.rows.tolist() == plan.rows.tolist()
    assert gamma.index[:, 0].tolist() == plan.cols.tolist()
    np.testing.assert_allclose(gamma.mass, plan.mass, rtol=1e-15)


@pytest.mark.parametrize("glue", [nwc_glue, product_glue])
def test_permutation_plans(glue):
    rng = np.random.default_rng(1)
    n, K = 7, 3
    a = np.full(n, 1.0 / n)
    sigmas = [rng.permutation(n) for _ in range(K)]
    plans = [make_plan(np.arange(n), s, a, a, a) for s in sigmas]
    gamma = glue(plans)
    assert gamma.nnz == n
    np.testing.assert_array_equal(gamma.index, np.stack(sigmas, axis=1))
    np.testing.assert_allclose(gamma.mass, 1.0 / n)
    rho = marginalize_targets(gamma)
    assert rho.nnz == n
    np.testing.assert_allclose(rho.mass, 1.0 / n)


def test_marginalize_merges_equal_tuples():
    a = [0.5, 0.5]
    plan = make_plan([0, 1], [0, 0], [0.5, 0.5], a, [1.0])
    rho = marginalize_targets(nwc_glue([plan, plan]))
    assert rho.index.tolist() == [[0, 0]]
    assert rho.mass.tolist() == [1.0]


def test_bimarginals_reproduce_plans():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a, plans = random_plans(rng)
        for glue in (nwc_glue, product_glue):
            gamma = glue(plans)
            assert np.all(gamma.mass > 0)
            assert gamma.mass.sum() == pytest.approx(1.0, abs=1e-12)
            np.testing.assert_allclose(gamma.source_marginal(), a, atol=1e-12)
            for k, pl in enumerate(plans):
                np.testing.assert_allclose(gamma.bimarginal(k), pl.dense(), atol=1e-12)


def test_nwc_sparsity_bound_and_product_is_denser():
    rng = np.random.default_rng(3)
    violations = 0
    for _ in range(500):
        a, plans = random_plans(rng)
        n = a.shape[0]
        gamma = nwc_glue(plans)
        bound = n + sum(pl.shape[1] for pl in plans) - len(plans)
        violations += gamma.nnz > bound
        assert product_glue(plans).nnz >= gamma.nnz
    assert violations == 0


def test_mismatched_row_marginals_are_rejected():
    p1 = make_plan([0, 1], [0, 0], [0.5, 0.5], [0.5, 0.5], [1.0])
    p2 = make_plan([0, 1], [0, 0], [0.4, 0.6], [0.4, 0.6], [1.0])
    for glue in (nwc_glue, product_glue):
        with pytest.raises(ValueError):
            glue([p1, p2])
        with pytest.raises(ValueError):
            glue([])


def test_product_rejects_mass_on_zero_source_weight():
    a = [0.0, 1.0]
    bad = make_plan([0, 1], [0, 0], [1e-11, 1.0], a, [1.0])
    with pytest.raises(ValueError):
        product_glue([bad])
