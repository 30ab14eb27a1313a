import csv
import hashlib
import json
import shutil

import numpy as np
import pytest

from fpbary.cli import main
from fpbary.core import BarycentreProblem, CostSpec, DiscreteMeasure
from fpbary.gmm import GaussianMixture, mw2
from fpbary.io import load_measure, save_measure
from fpbary.multimarginal import solve_mm


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_json(path):
    return json.loads(path.read_text())


@pytest.fixture
def clouds(tmp_path):
    rng = np.random.default_rng(0)
    paths = []
    for k in range(2):
        p = tmp_path / f"nu{k}.json"
        save_measure(p, DiscreteMeasure.uniform(rng.standard_normal((10, 2)) + 3 * k))
        paths.append(p)
    return paths


def inputs(paths):
    out = []
    for p in paths:
        out += ["--input", str(p)]
    return out


def test_barycentre_plateaus_early_and_matches_the_exact_barycentre(tmp_path, clouds):
    out = tmp_path / "run"
    assert main(["barycentre", *inputs(clouds), "--out", str(out), "--T", "6", "--alpha", "0"]) == 0
    trace = read_json(out / "trace.json")
    assert abs(trace["energies"][2] - trace["energies"][-1]) <= 1e-9
    targets = [load_measure(p) for p in clouds]
    exact = solve_mm(BarycentreProblem(targets, [CostSpec(weight=0.5), CostSpec(weight=0.5)])).objective
    assert trace["energies"][-1] == pytest.approx(exact, abs=1e-9)
    snaps = sorted((out / "snapshots").glob("iter_*.json"))
    assert len(snaps) == 7
    for s in snaps:
        load_measure(s)
    assert load_measure(out / "barycentre.json").size == 10


def test_support_growth_respects_bound_and_stabilises(tmp_path):
    rng = np.random.default_rng(1)
    paths = []
    for k, n in enumerate([6, 9, 4]):
        p = tmp_path / f"t{k}.csv"
        save_measure(p, DiscreteMeasure(rng.standard_normal((n, 2)), rng.dirichlet(np.ones(n))))
        paths.append(p)
    out = tmp_path / "run"
    assert main(["barycentre", *inputs(paths), "--weights-column", "--n-init", "10", "--out", str(out),
                 "--T", "30"]) == 0
    trace = read_json(out / "trace.json")
    N = trace["support_sizes"]
    growth = 6 + 9 + 4 - 3
    assert all(b <= a + growth for a, b in zip(N, N[1:]))
    assert trace["converged"]
    assert N[-1] == N[-2]


def test_pq_grid(tmp_path, clouds):
    out = tmp_path / "run"
    assert main(["barycentre", *inputs(clouds), "--pq-grid", "--n-init", "5", "--T", "5", "--out", str(out)]) == 0
    rows = read_csv(out / "pq_grid" / "summary.csv")
    assert len(rows) == 16
    for r in rows:
        assert r["finite"] == "true"
        mu = load_measure(out / "pq_grid" / f"p{float(r['p']):g}_q{float(r['q']):g}" / "barycentre.json")
        assert np.all(np.isfinite(mu.points))


def test_match_writes_translation_field(tmp_path, clouds):
    out = tmp_path / "run"
    query = tmp_path / "query.csv"
    query.write_text("x,y\n0.1,0.2\n-1,1\n")
    assert main(["match", "--input", str(clouds[0]), "--target", str(clouds[1]), "--query", str(query),
                 "--out", str(out)]) == 0
    field = np.loadtxt(out / "translation_field.csv", delimiter=",", skiprows=1)
    src, tgt = load_measure(clouds[0]), load_measure(clouds[1])
    assert field.shape == (10, 4)
    # uniform equal sizes: the field moves every source point onto a distinct target point
    moved = field[:, :2] + field[:, 2:]
    assert sorted(map(tuple, np.round(moved, 12))) == sorted(map(tuple, np.round(tgt.points, 12)))
    np.testing.assert_array_equal(field[:, :2], src.points)
    assert len(read_csv(out / "matched.csv")) == 2
    assert read_json(out / "match.json")["n_target"] == 10


def test_bench_support_small(tmp_path):
    out = tmp_path / "run"
    assert main(["bench-support", "--samples", "6", "--uniform-samples", "3", "--max-size", "15",
                 "--max-dim", "4", "--max-K", "4", "--out", str(out)]) == 0
    summary = read_json(out / "summary.json")
    assert summary["samples"] == 6 and summary["uniform_samples"] == 3
    assert summary["violations"] == 0 and summary["uniform_nonconstant"] == 0
    rows = read_csv(out / "support_sweep.csv")
    assert len(rows) == 9
    for r in rows:
        assert int(r["N_final"]) <= int(r["bound"])
        assert 2 <= int(r["K"]) <= 4 and 10 <= int(r["N0"]) <= 15


def test_bench_mm_small(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["bench-mm", "--sweeps", "n", "K", "--ns", "4", "--Ks", "2", "6", "--seeds", "2",
                 "--bench-variants", "G", "H_NFP", "G_uneven", "--budget", "20000", "--out", str(out)]) == 0
    rows = read_csv(out / "bench_mm.csv")
    assert {r["variant"] for r in rows} == {"G", "H_NFP", "G_uneven"}
    by_cell = {}
    for r in rows:
        assert float(r["energy_ratio"]) >= 1 - 1e-9
        by_cell.setdefault((r["sweep"], r["variant"], r["n"], r["K"], r["seed"]), {})[int(r["T"])] = \
            float(r["energy_ratio"])
    for (sweep, variant, *_), ratios in by_cell.items():
        if variant != "H_NFP":
            assert ratios[10] <= ratios[1] + 1e-12
    skipped = read_json(out / "skipped.json")["skipped"]
    assert any("K=6" in s for s in skipped)
    assert "notice: skipped" in capsys.readouterr().err
    summary = read_csv(out / "summary.csv")
    assert all(float(r["energy_q30"]) <= float(r["energy_median"]) <= float(r["energy_q70"]) for r in summary)


def test_projection_planes(tmp_path):
    out = tmp_path / "run"
    assert main(["projection-demo", "--mode", "planes", "--n-target", "20", "--n-init", "20", "--T", "5",
                 "--out", str(out)]) == 0
    summary = read_json(out / "summary.json")
    assert summary["all_finite"] and len(summary["per_target_cost"]) == 3
    assert load_measure(out / "barycentre.json").dim == 3


def test_projection_circles(tmp_path):
    out = tmp_path / "run"
    assert main(["projection-demo", "--mode", "circles", "--n-target", "30", "--n-init", "30",
                 "--out", str(out)]) == 0
    summary = read_json(out / "summary.json")
    trace = read_json(out / "trace.json")
    assert summary["iterations"] <= 10
    assert all(np.isfinite(trace["energies"]))
    assert summary["stationary"] and summary["final_stop_stat"] < 1e-6


def test_projection_single_circle(tmp_path):
    out = tmp_path / "run"
    assert main(["projection-demo", "--mode", "circles", "--centers", "[[0.5, -1.0]]", "--radii", "2.0",
                 "--n-target", "25", "--n-init", "25", "--out", str(out)]) == 0
    assert read_json(out / "summary.json")["max_circle_gap"] < 1e-9


def _mixture_file(path, rng, n):
    covs = []
    for _ in range(n):
        B = rng.standard_normal((2, 2))
        covs.append(B @ B.T / 2 + 0.2 * np.eye(2))
    GaussianMixture(rng.dirichlet(np.ones(n)), 3 * rng.standard_normal((n, 2)), np.stack(covs)).save(path)
    return path


def test_gmm_identical_inputs(tmp_path):
    rng = np.random.default_rng(2)
    g = _mixture_file(tmp_path / "g.json", rng, 2)
    out = tmp_path / "run"
    assert main(["gmm", "--input", str(g), "--input", str(g), "--n-components", "2", "--grid-resolution", "8",
                 "--gluing", "nwc", "--out", str(out)]) == 0
    bary = GaussianMixture.load(out / "barycentre_gmm.json")
    assert mw2(bary, GaussianMixture.load(g))[0] < 1e-12
    assert len(read_csv(out / "density.csv")) == 64
    assert read_json(out / "mm_comparison.json")["fp_at_least_objective"]
    # product gluing halves the mass on mixed component pairs at every step
    out = tmp_path / "product"
    assert main(["gmm", "--input", str(g), "--input", str(g), "--n-components", "2", "--grid-resolution", "8",
                 "--T", "60", "--alpha", "0", "--out", str(out)]) == 0
    energies = read_json(out / "trace.json")["energies"]
    assert energies[-1] < 1e-12
    assert mw2(GaussianMixture.load(out / "barycentre_gmm.json"), GaussianMixture.load(g))[0] < 1e-12


def test_gmm_interpolation(tmp_path):
    rng = np.random.default_rng(3)
    corners = [_mixture_file(tmp_path / f"c{k}.json", rng, 2) for k in range(4)]
    out = tmp_path / "run"
    assert main(["gmm", *inputs(corners), "--n-components", "2", "--interpolation", "2", "--grid-resolution", "4",
                 "--T", "5", "--out", str(out)]) == 0
    rows = read_csv(out / "interpolation" / "summary.csv")
    assert len(rows) == 4 and all(r["monotone"] == "true" for r in rows)
    for i in range(2):
        for j in range(2):
            GaussianMixture.load(out / "interpolation" / f"cell_{i}_{j}.json")
    assert main(["gmm", *inputs(corners[:3]), "--interpolation", "2", "--out", str(tmp_path / "bad")]) == 1


def test_config_file(tmp_path, clouds):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"T": 3, "alpha": 0.0, "lambda": [1, 3], "n_init": 4}))
    out = tmp_path / "run"
    assert main(["barycentre", *inputs(clouds), "--config", str(cfg), "--T", "2", "--out", str(out)]) == 0
    echo = read_json(out / "config.json")
    assert echo["T"] == 2 and echo["alpha"] == 0.0 and echo["lam"] == [1, 3] and echo["n_init"] == 4
    assert read_json(out / "trace.json")["iterations"] == 2


def test_unknown_config_key_exits_2(tmp_path, clouds, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"temperature": 3}))
    assert main(["barycentre", *inputs(clouds), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "temperature" in capsys.readouterr().err
    cfg.write_text("{\n  \"T\": 3,\n}")
    assert main(["barycentre", *inputs(clouds), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_stage_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("0,1\n2,oops\n")
    assert main(["barycentre", "--input", str(bad), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "[input]" in err and "bad.csv:2:" in err
    a = tmp_path / "a.json"
    save_measure(a, DiscreteMeasure.uniform([[0.0]]))
    assert main(["barycentre", "--input", str(a), "--input", str(a), "--lambda", "1", "--out",
                 str(tmp_path / "o")]) == 1


def test_deterministic_reruns_and_manifest(tmp_path, clouds):
    out = tmp_path / "run"
    argv = ["barycentre", *inputs(clouds), "--T", "4", "--deterministic", "--out", str(out)]
    assert main(argv) == 0
    first = {p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file()}
    shutil.rmtree(out)
    assert main(argv) == 0
    second = {p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file()}
    assert first == second
    manifest = read_json(out / "manifest.json")["files"]
    assert {e["path"] for e in manifest} == {str(p) for p in first if str(p) != "manifest.json"}
    for e in manifest:
        data = (out / e["path"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == e["sha256"] and len(data) == e["bytes"]
