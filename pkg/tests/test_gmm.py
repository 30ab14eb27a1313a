import numpy as np
import pytest

from fpbary.fixed_point import FixedPointConfig
from fpbary.gmm import (
    GaussianMixture,
    bilinear_weights,
    density_grid,
    gmm_barycentre,
    gmm_mm_oracle,
    initial_mixture,
    mw2,
    write_density_csv,
)
from fpbary.ground_bary import bures_barycentre, gaussian_w2


def random_spd(rng, d, lo=0.2):
    B = rng.standard_normal((d, d))
    return B @ B.T / d + lo * np.eye(d)


def random_mixture(rng, n, d=2, spread=3.0):
    return GaussianMixture(rng.dirichlet(np.ones(n)), spread * rng.standard_normal((n, d)),
                           np.stack([random_spd(rng, d) for _ in range(n)]))


def single(mean, cov):
    return GaussianMixture([1.0], [mean], [cov])


def test_validation():
    I = np.eye(2)
    with pytest.raises(ValueError):
        GaussianMixture([0.5, 0.6], [[0, 0], [1, 1]], [I, I])
    with pytest.raises(ValueError):
        GaussianMixture([1.0], [[0, 0]], [-I])
    with pytest.raises(ValueError):
        GaussianMixture([1.0], [[0, 0]], [[[1.0, 0.5], [0.0, 1.0]]])
    with pytest.raises(ValueError):
        GaussianMixture([1.0], [[0, 0]], [np.eye(3)])


def test_mw2_examples():
    I = np.eye(2)
    rng = np.random.default_rng(0)
    g = random_mixture(rng, 3)
    assert mw2(g, g)[0] == pytest.approx(0.0, abs=1e-12)
    assert mw2(single([0, 0], I), single([2, 0], 4 * I))[0] == pytest.approx(6.0, abs=1e-12)
    A = GaussianMixture([0.5, 0.5], [[0, 0], [100, 0]], [I, 2 * I])
    B = GaussianMixture([0.5, 0.5], [[1, 0], [100, 1]], [I, 3 * I])
    expected = 0.5 * gaussian_w2(([0, 0], I), ([1, 0], I)) + 0.5 * gaussian_w2(([100, 0], 2 * I), ([100, 1], 3 * I))
    assert mw2(A, B)[0] == pytest.approx(expected, abs=1e-12)
    with pytest.raises(ValueError):
        mw2(A, single([0, 0, 0], np.eye(3)))


def test_identical_mixtures_give_zero_distance():
    rng = np.random.default_rng(1)
    g = random_mixture(rng, 3)
    bary, trace = gmm_barycentre([g, g], [0.5, 0.5], 3, init=g)
    assert mw2(bary, g)[0] < 1e-9
    assert gmm_mm_oracle([g, g, g], [0.2, 0.3, 0.5]).objective == pytest.approx(0.0, abs=1e-12)


def test_single_components_match_bures():
    rng = np.random.default_rng(2)
    gs = [single(rng.standard_normal(2), random_spd(rng, 2)) for _ in range(2)]
    lam = [0.3, 0.7]
    m, S, _ = bures_barycentre([(g.means[0], g.covariances[0]) for g in gs], lam)
    bary, _ = gmm_barycentre(gs, lam, 1)
    np.testing.assert_allclose(bary.means[0], m, atol=1e-10)
    np.testing.assert_allclose(bary.covariances[0], S, atol=1e-8)
    sol = gmm_mm_oracle(gs, lam)
    assert sol.barycentre.size == 1
    np.testing.assert_allclose(sol.barycentre.points[0, :2], m, atol=1e-10)


def test_barycentre_invariants_and_lower_bound():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        gs = [random_mixture(rng, int(rng.integers(1, 5))) for _ in range(3)]
        lam = rng.dirichlet(np.ones(3))
        for gluing in ("product", "nwc"):
            bary, trace = gmm_barycentre(gs, lam, 3, FixedPointConfig(gluing=gluing, max_iter=5, stop_alpha=0.0))
            assert np.all(np.diff(trace.energies) <= 1e-9)
            eig = np.concatenate([np.linalg.eigvalsh(g.covariances).ravel() for g in gs])
            out = np.linalg.eigvalsh(bary.covariances)
            assert out.min() >= eig.min() - 1e-9 and out.max() <= eig.max() + 1e-9
            means = np.concatenate([g.means for g in gs])
            lo, hi = means.min(axis=0), means.max(axis=0)
            assert np.all(bary.means >= lo - 1e-9) and np.all(bary.means <= hi + 1e-9)
            assert trace.energies[-1] >= gmm_mm_oracle(gs, lam).objective - 1e-9


def test_means_inside_convex_hull():
    from scipy.optimize import linprog

    rng = np.random.default_rng(9)
    gs = [random_mixture(rng, 3) for _ in range(3)]
    bary, _ = gmm_barycentre(gs, [0.2, 0.3, 0.5], 4)
    pool = np.concatenate([g.means for g in gs])
    for m in bary.means:
        res = linprog(np.zeros(len(pool)), A_eq=np.vstack([pool.T, np.ones(len(pool))]),
                      b_eq=np.append(m, 1.0), bounds=(0, None), method="highs")
        assert res.status == 0


def test_interpolation_corners_have_finite_monotone_traces():
    rng = np.random.default_rng(3)
    corners = [random_mixture(rng, 2) for _ in range(4)]
    for s, t in [(0.25, 0.25), (0.5, 0.75)]:
        lam = bilinear_weights(s, t)
        assert lam.sum() == pytest.approx(1.0)
        _, trace = gmm_barycentre(corners, lam, 2, FixedPointConfig(gluing="product", max_iter=4, stop_alpha=0.0))
        assert np.all(np.isfinite(trace.energies))
        assert np.all(np.diff(trace.energies) <= 1e-9)
    # a corner weight of one reproduces that corner
    bary, _ = gmm_barycentre(corners, bilinear_weights(1.0, 0.0), 2, init=corners[1])
    assert mw2(bary, corners[1])[0] < 1e-9


def test_json_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    g = random_mixture(rng, 3)
    path = tmp_path / "g.json"
    g.save(path)
    back = GaussianMixture.load(path)
    for attr in ("weights", "means", "covariances"):
        np.testing.assert_array_equal(getattr(back, attr), getattr(g, attr))
    with pytest.raises(ValueError):
        GaussianMixture.from_dict({**g.to_dict(), "extra": 1})
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ValueError):
        GaussianMixture.load(bad)


def test_density_grid(tmp_path):
    g = single([0.0, 0.0], np.eye(2))
    rows = density_grid(g, (-1, -1), (1, 1), resolution=3)
    assert rows.shape == (9, 3)
    assert rows[4, 2] == pytest.approx(1 / (2 * np.pi))
    write_density_csv(tmp_path / "d.csv", rows)
    data = np.loadtxt(tmp_path / "d.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data, rows)


def test_initial_mixture():
    rng = np.random.default_rng(5)
    gs = [random_mixture(rng, 2) for _ in range(2)]
    init = initial_mixture(gs, 3, seed=1)
    assert init.size == 3
    np.testing.assert_allclose(init.weights, 1 / 3)
    pool = np.concatenate([g.means for g in gs])
    assert all(any(np.array_equal(m, p) for p in pool) for m in init.means)
    with pytest.raises(ValueError):
        initial_mixture(gs, 0)
