import numpy as np
import pytest

from fpbary.core import BarycentreProblem, CostSpec, DiscreteMeasure

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def record(number: int, title: str, passed: bool, detail: str = ""):
    prev = ACCEPTANCE.get(number)
    if prev is not None:
        passed = passed and prev[1]
        detail = "; ".join(x for x in (prev[2], detail) if x)
    ACCEPTANCE[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        line = f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session", autouse=True)
def _warm_jit():
    # compile the numba kernels once so timed sections measure solving only
    from fpbary.gluing import nwc_glue
    from fpbary.ot_solver import solve_exact

    a = np.array([0.5, 0.5])
    for pricing in ("dantzig", "block"):
        p = solve_exact(a, a, np.array([[0.0, 1.0], [1.0, 0.0]]), pricing=pricing)
    nwc_glue([p, p])


def random_problem(rng, K, n_max, d, sizes=None, uniform=False):
    """Seeded squared-Euclidean problem with Gaussian target clouds."""
    if sizes is None:
        sizes = rng.integers(1, n_max + 1, size=K)
    targets = []
    for n in sizes:
        pts = rng.standard_normal((int(n), d))
        w = np.full(int(n), 1.0 / n) if uniform else rng.dirichlet(np.ones(int(n)))
        targets.append(DiscreteMeasure(pts, w))
    lam = rng.dirichlet(np.ones(K))
    lam[-1] = 1.0 - lam[:-1].sum()
    return BarycentreProblem(targets, [CostSpec(weight=float(l)) for l in lam])


def random_measure(rng, n, d, uniform=False):
    pts = rng.standard_normal((n, d))
    return DiscreteMeasure.uniform(pts) if uniform else DiscreteMeasure(pts, rng.dirichlet(np.ones(n)))
