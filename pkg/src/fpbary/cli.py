"""Command-line front end.

Every run writes into one output directory: ``config.json`` (the resolved
settings), the requested artefacts, and ``manifest.json`` listing every file
with its SHA-256 checksum.  Settings may come from a JSON file passed with
``--config``; flags given on the command line take precedence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    CIRCLE_PROJECTION,
    LINEAR_PROJECTION,
    NORM_POWER,
    SQEUCLIDEAN,
    BarycentreProblem,
    CostSpec,
    DiscreteMeasure,
    cost_matrix,
)
from .fixed_point import (
    FixedPointConfig,
    barycentric_projection,
    default_init,
    run,
)
from .gmm import (
    GaussianMixture,
    bilinear_weights,
    density_grid,
    gmm_barycentre,
    gmm_mm_oracle,
    gmm_problem,
    initial_mixture,
    write_density_csv,
)
from .io import MeasureFormatError, load_measure, measure_to_dict, save_measure
from .multimarginal import BudgetExceeded, MMConfig, solve_mm, tuple_count
from .ot_solver import solve_exact

logger = logging.getLogger("fpbary")

VARIANT_NAMES = {"G": "G", "H": "H", "G-eps": "G_epsilon"}
PQ_VALUES = (1.0, 1.5, 2.0, 3.0)


class CliError(Exception):
    """User-facing failure; ``stage`` names where it happened."""

    def __init__(self, msg, stage=None):
        super().__init__(msg)
        self.stage = stage


# --------------------------------------------------------------------------
# output directory bookkeeping


class RunDir:
    def __init__(self, root, deterministic: bool):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.deterministic = deterministic

    def path(self, rel) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        rel = str(Path(rel).as_posix())
        if rel not in self.files:
            self.files.append(rel)
        return p

    def write_json(self, rel, obj):
        self.path(rel).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def write_measure(self, rel, mu: DiscreteMeasure):
        save_measure(self.path(rel), mu)

    def write_csv(self, rel, header, rows):
        with open(self.path(rel), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])

    def write_trace(self, rel, trace):
        d = trace.to_dict()
        if self.deterministic:
            d["wall_ms"] = [0.0] * len(d["wall_ms"])
        self.write_json(rel, d)

    def ms(self, value: float) -> float:
        return 0.0 if self.deterministic else float(value)

    def finish(self):
        entries = []
        for rel in sorted(self.files):
            data = (self.root / rel).read_bytes()
            entries.append({"path": rel, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        (self.root / "manifest.json").write_text(json.dumps({"files": entries}, indent=2) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


# --------------------------------------------------------------------------
# argument parsing


def build_parser(with_defaults: bool = True) -> argparse.ArgumentParser:
    """Parser for all subcommands.

    With ``with_defaults=False`` every option defaults to "absent", which is
    how the flags actually typed on the command line are told apart from
    values supplied by a config file.
    """

    def D(value):
        return value if with_defaults else argparse.SUPPRESS

    common = argparse.ArgumentParser(add_help=False, argument_default=None if with_defaults else argparse.SUPPRESS)
    common.add_argument("--config", default=D(None), help="JSON file with settings (flags override it)")
    common.add_argument("--out", default=D("fpbary_out"), help="output directory")
    common.add_argument("--seed", type=int, default=D(0))
    common.add_argument("--jobs", type=int, default=D(1), help="concurrent benchmark cells")
    common.add_argument("--T", type=int, default=D(50), dest="T", help="maximum fixed-point iterations")
    common.add_argument("--alpha", type=float, default=D(1e-10), help="stopping threshold")
    common.add_argument("--variant", choices=sorted(VARIANT_NAMES), default=D(None))
    common.add_argument("--gluing", choices=["nwc", "product"], default=D(None))
    common.add_argument("--epsilon", type=float, default=D(None))
    common.add_argument("--lambda", type=float, nargs="+", dest="lam", default=D(None))
    common.add_argument("--n-init", type=int, dest="n_init", default=D(None))
    common.add_argument("--input", action="append", default=D(None), help="input file (repeatable)")
    common.add_argument("--deterministic", action="store_true", default=D(False),
                        help="zero all wall-clock fields so reruns are byte-identical")
    common.add_argument("-v", "--verbose", action="store_true", default=D(False))

    cost = argparse.ArgumentParser(add_help=False, argument_default=None if with_defaults else argparse.SUPPRESS)
    cost.add_argument("--cost", choices=[SQEUCLIDEAN, NORM_POWER], default=D(SQEUCLIDEAN))
    cost.add_argument("--p", type=float, default=D(2.0))
    cost.add_argument("--q", type=float, default=D(2.0))

    parser = argparse.ArgumentParser(prog="fpbary", description="Free-support barycentres by fixed-point iteration.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("barycentre", parents=[common, cost], help="barycentre of measure files")
    p.add_argument("--init", default=D(None), help="initial measure file")
    p.add_argument("--pq-grid", action="store_true", dest="pq_grid", default=D(False),
                   help="sweep norm-power costs over p, q in {1, 3/2, 2, 3}")
    p.add_argument("--weights-column", action="store_true", dest="weights_column", default=D(False),
                   help="read the last CSV column as weights")

    p = sub.add_parser("match", parents=[common, cost], help="translation field towards a target measure")
    p.add_argument("--target", default=D(None), help="target measure, e.g. a barycentre")
    p.add_argument("--query", default=D(None), help="points to translate with the nearest-point field")

    p = sub.add_parser("bench-support", parents=[common], help="support-size sweep")
    p.add_argument("--samples", type=int, default=D(500))
    p.add_argument("--uniform-samples", type=int, dest="uniform_samples", default=D(100))
    p.add_argument("--min-size", type=int, dest="min_size", default=D(10))
    p.add_argument("--max-size", type=int, dest="max_size", default=D(100))
    p.add_argument("--max-dim", type=int, dest="max_dim", default=D(20))
    p.add_argument("--max-K", type=int, dest="max_K", default=D(10))

    p = sub.add_parser("bench-mm", parents=[common], help="fixed point against the multi-marginal LP")
    p.add_argument("--ns", type=int, nargs="+", default=D([5, 10, 15, 20, 30]))
    p.add_argument("--ds", type=int, nargs="+", default=D([2, 5, 10, 20, 50]))
    p.add_argument("--Ks", type=int, nargs="+", dest="Ks", default=D([2, 3, 4, 5]))
    p.add_argument("--Ts", type=int, nargs="+", dest="Ts", default=D([1, 5, 10]))
    p.add_argument("--seeds", type=int, default=D(10), help="instances per cell")
    p.add_argument("--sweeps", nargs="+", choices=["n", "d", "K"], default=D(["n", "d", "K"]))
    p.add_argument("--bench-variants", nargs="+", dest="bench_variants", choices=["G", "H_NFP", "G_uneven"],
                   default=D(["G", "H_NFP", "G_uneven"]))
    p.add_argument("--budget", type=int, default=D(1_000_000))

    p = sub.add_parser("projection-demo", parents=[common], help="projection and circle costs")
    p.add_argument("--mode", choices=["planes", "circles"], default=D("planes"))
    p.add_argument("--q", type=float, default=D(1.0), help="exponent for plane projections (1 or 2)")
    p.add_argument("--centers", default=D(None), help="JSON list of circle centres")
    p.add_argument("--radii", type=float, nargs="+", default=D(None))
    p.add_argument("--n-target", type=int, dest="n_target", default=D(60))

    p = sub.add_parser("gmm", parents=[common], help="Gaussian mixture barycentres")
    p.add_argument("--n-components", type=int, dest="n_components", default=D(6))
    p.add_argument("--interpolation", type=int, default=D(0), help="grid size for 4-corner interpolation")
    p.add_argument("--budget", type=int, default=D(1_000_000))
    p.add_argument("--grid-resolution", type=int, dest="grid_resolution", default=D(64))
    return parser


_CONFIG_ALIASES = {"lambda": "lam"}


def parse_args(argv):
    parser = build_parser(True)
    args = parser.parse_args(argv)
    if args.config:
        explicit = vars(build_parser(False).parse_args(argv))
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.config}:{exc.lineno}: invalid JSON ({exc.msg})", "config") from None
        except OSError as exc:
            raise CliError(f"{args.config}: {exc.strerror}", "config") from None
        if not isinstance(cfg, dict):
            raise CliError(f"{args.config}:1: expected a JSON object", "config")
        known = set(vars(args))
        for key, value in cfg.items():
            dest = _CONFIG_ALIASES.get(key, key.replace("-", "_"))
            if dest not in known or dest in ("command", "config"):
                raise CliError(f"{args.config}: unknown key {key!r} for '{args.command}'", "config")
            if dest not in explicit:
                setattr(args, dest, value)
    return args


# --------------------------------------------------------------------------
# helpers


def _fp_config(args, default_variant="G", default_gluing=None, max_iter=None, alpha=None) -> FixedPointConfig:
    variant = VARIANT_NAMES[args.variant or default_variant]
    gluing = args.gluing or (default_gluing if variant == "G" else None)
    return FixedPointConfig(
        variant=variant,
        epsilon=args.epsilon,
        gluing=gluing,
        max_iter=max_iter or args.T,
        stop_alpha=args.alpha if alpha is None else alpha,
        seed=args.seed,
    )


def _lambdas(args, K):
    if args.lam is None:
        lam = np.full(K, 1.0 / K)
    else:
        lam = np.asarray(args.lam, dtype=float)
        if lam.shape[0] != K:
            raise CliError(f"--lambda has {lam.shape[0]} values for {K} inputs", "config")
        if np.any(lam <= 0):
            raise CliError("--lambda values must be positive", "config")
        lam = lam / lam.sum()
    lam[-1] = 1.0 - lam[:-1].sum()
    return lam


def _ground_cost(args, weight) -> CostSpec:
    if args.cost == NORM_POWER:
        return CostSpec(NORM_POWER, weight, p=args.p, q=args.q)
    return CostSpec(SQEUCLIDEAN, weight)


def _load_inputs(args, need_at_least=1):
    if not args.input or len(args.input) < need_at_least:
        raise CliError(f"need at least {need_at_least} --input file(s)", "input")
    try:
        wc = True if getattr(args, "weights_column", False) else None
        return [load_measure(p, weights_column=wc) for p in args.input]
    except MeasureFormatError as exc:
        raise CliError(str(exc), "input") from None
    except OSError as exc:
        raise CliError(f"{exc.filename}: {exc.strerror}", "input") from None


def _run_stage(stage, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except CliError:
        raise
    except Exception as exc:  # noqa: BLE001 - reported with the failing stage
        raise CliError(f"{type(exc).__name__}: {exc}", stage) from exc


# --------------------------------------------------------------------------
# barycentre


def cmd_barycentre(args, out: RunDir) -> int:
    targets = _load_inputs(args)
    lam = _lambdas(args, len(targets))
    costs = [_ground_cost(args, l) for l in lam]
    problem = _run_stage("problem", BarycentreProblem, targets, costs)
    if args.init:
        mu0 = load_measure(args.init)
    else:
        mu0 = default_init(problem, args.n_init or targets[0].size, args.seed)
    cfg = _fp_config(args)

    def snap(t, mu):
        out.write_measure(f"snapshots/iter_{t:03d}.json", mu)

    mu, trace = _run_stage("fixed point", run, problem, cfg, mu0, snap)
    out.write_measure("barycentre.json", mu)
    out.write_trace("trace.json", trace)

    if args.pq_grid:
        rows = []
        for p in PQ_VALUES:
            for q in PQ_VALUES:
                pcosts = [CostSpec(NORM_POWER, l, p=p, q=q) for l in lam]
                pb = BarycentreProblem(targets, pcosts)
                m, tr = _run_stage(f"pq grid p={p} q={q}", run, pb, cfg, mu0)
                tag = f"pq_grid/p{p:g}_q{q:g}"
                out.write_measure(f"{tag}/barycentre.json", m)
                out.write_trace(f"{tag}/trace.json", tr)
                thresh = cfg.stop_alpha / m.size * float(np.sum(m.points**2))
                rows.append([p, q, tr.energies[-1], tr.stop_stats[-1], thresh, tr.converged,
                             tr.iterations, bool(np.all(np.isfinite(m.points)))])
        out.write_csv("pq_grid/summary.csv",
                      ["p", "q", "energy", "stop_stat", "threshold", "converged", "iterations", "finite"], rows)
    return 0


# --------------------------------------------------------------------------
# match


def cmd_match(args, out: RunDir) -> int:
    (source,) = _load_inputs(args)[:1]
    if not args.target:
        raise CliError("match needs --target", "input")
    target = load_measure(args.target)
    cost = _ground_cost(args, 1.0)
    M = cost_matrix(cost, source.points, target.points)
    plan = _run_stage("transport", solve_exact, source.weights, target.weights, M)
    mapped = barycentric_projection(plan, target.points)
    tau = mapped - source.points
    d = source.dim
    header = [f"x{i}" for i in range(d)] + [f"tau{i}" for i in range(d)]
    out.write_csv("translation_field.csv", header, np.hstack([source.points, tau]))
    if args.query:
        Q = load_measure(args.query).points
        _, idx = cKDTree(source.points).query(Q)
        out.write_csv("matched.csv", [f"x{i}" for i in range(d)] + [f"y{i}" for i in range(d)],
                      np.hstack([Q, Q + tau[idx]]))
    out.write_json("match.json", {"cost": float(plan.cost), "n_source": source.size, "n_target": target.size})
    return 0


# --------------------------------------------------------------------------
# support-size sweep


def support_sample(seed_seq, uniform, min_size, max_size, max_dim, max_K):
    """Random projected squared-Euclidean problem; returns (problem, mu0)."""
    rng = np.random.default_rng(seed_seq)
    K = int(rng.integers(2, max_K + 1))
    dks = rng.integers(1, max_dim + 1, size=K)
    d = int(rng.integers(1, min(max_dim, int(dks.sum())) + 1))
    if uniform:
        n = int(rng.integers(min_size, max_size + 1))
        N0, nks = n, np.full(K, n)
    else:
        N0 = int(rng.integers(min_size, max_size + 1))
        nks = rng.integers(min_size, max_size + 1, size=K)
    targets, costs = [], []
    lam = np.full(K, 1.0 / K)
    lam[-1] = 1.0 - lam[:-1].sum()
    for k in range(K):
        pts = rng.standard_normal((int(nks[k]), int(dks[k])))
        w = np.full(nks[k], 1.0 / nks[k]) if uniform else rng.dirichlet(np.ones(nks[k]))
        targets.append(DiscreteMeasure(pts, w))
        P = rng.standard_normal((int(dks[k]), d))
        costs.append(CostSpec(LINEAR_PROJECTION, float(lam[k]), q=2, P=P))
    pts0 = rng.standard_normal((N0, d))
    w0 = np.full(N0, 1.0 / N0) if uniform else rng.dirichlet(np.ones(N0))
    return BarycentreProblem(targets, costs), DiscreteMeasure(pts0, w0)


def _support_cell(task):
    idx, kind, seed_seq, opts, T, alpha = task
    problem, mu0 = support_sample(seed_seq, kind == "uniform", *opts)
    t0 = time.perf_counter()
    mu, tr = run(problem, FixedPointConfig(max_iter=T, stop_alpha=alpha), mu0)
    ms = 1e3 * (time.perf_counter() - t0)
    sum_nk = sum(nu.size for nu in problem.targets)
    iters = tr.iterations
    bound = tr.support_sizes[0] + iters * sum_nk - iters * problem.K
    constant = len(set(tr.support_sizes)) == 1
    return [idx, kind, problem.K, problem.dim, tr.support_sizes[0], sum_nk, iters, mu.size, bound,
            mu.size <= bound, constant, tr.converged, tr.energies[-1], ms]


def _pool_map(fn, tasks, jobs):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def cmd_bench_support(args, out: RunDir) -> int:
    opts = (args.min_size, args.max_size, args.max_dim, args.max_K)
    if args.min_size < 1 or args.max_size < args.min_size:
        raise CliError("need 1 <= --min-size <= --max-size", "config")
    root = np.random.SeedSequence(args.seed)
    gen_seeds, uni_seeds = root.spawn(2)
    tasks = [(i, "general", s, opts, args.T, args.alpha) for i, s in enumerate(gen_seeds.spawn(args.samples))]
    tasks += [(i, "uniform", s, opts, args.T, args.alpha)
              for i, s in enumerate(uni_seeds.spawn(args.uniform_samples))]
    rows = _run_stage("support sweep", _pool_map, _support_cell, tasks, args.jobs)
    for r in rows:
        r[-1] = out.ms(r[-1])
    header = ["sample", "kind", "K", "d", "N0", "sum_nk", "iterations", "N_final", "bound", "within_bound",
              "constant_support", "converged", "energy", "ms"]
    out.write_csv("support_sweep.csv", header, rows)
    gen = [r for r in rows if r[1] == "general"]
    uni = [r for r in rows if r[1] == "uniform"]
    summary = {
        "samples": len(gen),
        "violations": int(sum(not r[9] for r in gen)),
        "median_iterations": float(np.median([r[6] for r in gen])) if gen else None,
        "uniform_samples": len(uni),
        "uniform_nonconstant": int(sum(not r[10] for r in uni)),
    }
    out.write_json("summary.json", summary)
    print(json.dumps(summary))
    return 0


# --------------------------------------------------------------------------
# multi-marginal comparison


def mm_instance(seed, n, d, K, uneven=False):
    """Uniform Gaussian-sample targets, all ``n`` points or evenly spaced sizes ``n/2 .. 2n``."""
    rng = np.random.default_rng(seed)
    if uneven and K > 1:
        sizes = np.rint(np.linspace(n / 2, 2 * n, K)).astype(int)
    else:
        sizes = np.full(K, n)
    sizes = np.maximum(sizes, 1)
    lam = np.full(K, 1.0 / K)
    lam[-1] = 1.0 - lam[:-1].sum()
    targets = [DiscreteMeasure.uniform(rng.standard_normal((int(s), d))) for s in sizes]
    problem = BarycentreProblem(targets, [CostSpec(SQEUCLIDEAN, float(l)) for l in lam])
    return problem, rng


def _mm_cell(task):
    sweep, variant, n, d, K, seed, Ts, budget = task
    problem, rng = mm_instance(seed, n, d, K, uneven=(variant == "G_uneven"))
    N = tuple_count(problem)
    if N > budget:
        return {"skipped": f"{sweep}/{variant} n={n} d={d} K={K}: {N} tuples exceed budget {budget}"}
    t0 = time.perf_counter()
    sol = solve_mm(problem, MMConfig(budget=budget))
    mm_ms = 1e3 * (time.perf_counter() - t0)
    n0 = (n - 1) * K + 1 if variant == "H_NFP" else n
    mu0 = DiscreteMeasure.uniform(rng.standard_normal((n0, d)))
    cfg = FixedPointConfig(variant="H" if variant == "H_NFP" else "G", max_iter=max(Ts), stop_alpha=0.0)
    _, tr = run(problem, cfg, mu0)
    rows = []
    for T in Ts:
        t = min(T, tr.iterations)
        fp_energy = tr.energies[t]
        fp_ms = float(np.sum(tr.wall_ms[:t]))
        ratio = fp_energy / sol.objective if sol.objective > 0 else 1.0
        rows.append([sweep, variant, n, d, K, seed, T, fp_energy, sol.objective, ratio, fp_ms, mm_ms,
                     fp_ms / mm_ms if mm_ms > 0 else float("nan")])
    return {"rows": rows}


def cmd_bench_mm(args, out: RunDir) -> int:
    cells = []
    for sweep in args.sweeps:
        if sweep == "n":
            grid = [(n, 10, 3) for n in args.ns]
        elif sweep == "d":
            grid = [(30, d, 3) for d in args.ds]
        else:
            grid = [(10, 10, K) for K in args.Ks]
        for variant in args.bench_variants:
            for n, d, K in grid:
                for s in range(args.seeds):
                    seed = args.seed * 1_000_003 + s
                    cells.append((sweep, variant, n, d, K, seed, list(args.Ts), args.budget))
    results = _run_stage("multi-marginal benchmark", _pool_map, _mm_cell, cells, args.jobs)
    rows, skipped = [], []
    for r in results:
        if "skipped" in r:
            if r["skipped"] not in skipped:
                skipped.append(r["skipped"])
                print(f"notice: skipped {r['skipped']}", file=sys.stderr)
        else:
            rows.extend(r["rows"])
    for r in rows:
        r[10], r[11] = out.ms(r[10]), out.ms(r[11])
        r[12] = 0.0 if out.deterministic else r[12]
    header = ["sweep", "variant", "n", "d", "K", "seed", "T", "fp_energy", "mm_objective", "energy_ratio",
              "fp_ms", "mm_ms", "time_ratio"]
    out.write_csv("bench_mm.csv", header, rows)
    summary = []
    keys = sorted({(r[0], r[1], r[2], r[3], r[4], r[6]) for r in rows}, key=str)
    for key in keys:
        sel = [r for r in rows if (r[0], r[1], r[2], r[3], r[4], r[6]) == key]
        er = np.array([r[9] for r in sel])
        tr_ = np.array([r[12] for r in sel])
        summary.append(list(key) + [len(sel), np.quantile(er, 0.3), np.median(er), np.quantile(er, 0.7),
                                    np.quantile(tr_, 0.3), np.median(tr_), np.quantile(tr_, 0.7)])
    out.write_csv("summary.csv", ["sweep", "variant", "n", "d", "K", "T", "count", "energy_q30", "energy_median",
                                  "energy_q70", "time_q30", "time_median", "time_q70"], summary)
    out.write_json("skipped.json", {"skipped": skipped})
    return 0


# --------------------------------------------------------------------------
# projection demos


def _shape_cloud(rng, kind, n):
    t = rng.uniform(0, 2 * np.pi, n)
    if kind == 0:
        pts = np.stack([np.cos(t), np.sin(t)], 1)
    elif kind == 1:
        s = rng.uniform(-1, 1, n)
        side = rng.integers(0, 4, n)
        pts = np.where(side[:, None] < 2,
                       np.stack([s, np.where(side == 0, -1.0, 1.0)], 1),
                       np.stack([np.where(side == 2, -1.0, 1.0), s], 1))
    else:
        s = rng.uniform(-1, 1, n)
        pts = np.where(rng.random(n)[:, None] < 0.5, np.stack([s, 0 * s], 1), np.stack([0 * s, s], 1))
    return pts + 0.03 * rng.standard_normal((n, 2))


def cmd_projection_demo(args, out: RunDir) -> int:
    rng = np.random.default_rng(args.seed)
    variant = args.variant or "H"
    if args.mode == "planes":
        targets = _load_inputs(args) if args.input else [
            DiscreteMeasure.uniform(_shape_cloud(rng, k, args.n_target)) for k in range(3)
        ]
        K = len(targets)
        lam = _lambdas(args, K)
        planes = [np.delete(np.eye(3), k % 3, axis=0) for k in range(K)]
        q = 2 if args.q == 2 else 1
        costs = [CostSpec(LINEAR_PROJECTION, float(l), q=q, P=P) for l, P in zip(lam, planes)]
        problem = BarycentreProblem(targets, costs)
        mu0 = default_init(problem, args.n_init or 100, args.seed)
        cfg = _fp_config(args, default_variant=variant)
    else:
        centers = json.loads(args.centers) if isinstance(args.centers, str) else args.centers
        if centers is None:
            centers = [[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]]
        radii = args.radii or [1.0] * len(centers)
        if len(radii) != len(centers):
            raise CliError("--radii must match the number of centres", "config")
        K = len(centers)
        lam = _lambdas(args, K)
        targets = []
        for c, r in zip(centers, radii):
            # points concentrated on an arc of each circle
            th = rng.vonmises(rng.uniform(-np.pi, np.pi), 2.0, args.n_target)
            targets.append(DiscreteMeasure.uniform(np.asarray(c) + r * np.stack([np.cos(th), np.sin(th)], 1)))
        costs = [CostSpec(CIRCLE_PROJECTION, float(l), center=c, radius=r) for l, c, r in zip(lam, centers, radii)]
        problem = BarycentreProblem(targets, costs)
        mu0 = default_init(problem, args.n_init or 100, args.seed)
        cfg = _fp_config(args, default_variant=variant, max_iter=min(args.T, 10) if args.T == 50 else args.T)
    for k, nu in enumerate(targets):
        out.write_measure(f"targets/target_{k}.json", nu)

    def snap(t, mu):
        out.write_measure(f"snapshots/iter_{t:03d}.json", mu)

    mu, trace = _run_stage("fixed point", run, problem, cfg, mu0, snap)
    out.write_measure("barycentre.json", mu)
    out.write_trace("trace.json", trace)
    per_target = []
    for nu, c in zip(problem.targets, problem.costs):
        per_target.append(float(solve_exact(mu.weights, nu.weights, cost_matrix(c, mu.points, nu.points)).cost))
    summary = {
        "mode": args.mode,
        "K": problem.K,
        "energy": trace.energies[-1],
        "per_target_cost": per_target,
        "all_finite": bool(np.all(np.isfinite(per_target)) and np.all(np.isfinite(mu.points))),
        "final_stop_stat": trace.stop_stats[-1],
        "stationary": bool(trace.stop_stats[-1] < 1e-6),
        "iterations": trace.iterations,
    }
    if args.mode == "circles" and K == 1:
        c, r = np.asarray(costs[0].center), costs[0].radius
        summary["max_circle_gap"] = float(np.abs(np.linalg.norm(mu.points - c, axis=1) - r).max())
    out.write_json("summary.json", summary)
    return 0


# --------------------------------------------------------------------------
# Gaussian mixtures


def _load_mixtures(args, need=1):
    if not args.input or len(args.input) < need:
        raise CliError(f"need at least {need} --input mixture file(s)", "input")
    try:
        return [GaussianMixture.load(p) for p in args.input]
    except (ValueError, KeyError) as exc:
        raise CliError(str(exc), "input") from None
    except OSError as exc:
        raise CliError(f"{exc.filename}: {exc.strerror}", "input") from None


def _mixture_box(mixtures, pad=3.0):
    means = np.concatenate([g.means for g in mixtures])
    spread = max(np.sqrt(np.concatenate([g.covariances for g in mixtures])[:, [0, 1], [0, 1]].max()), 1e-3)
    return means.min(0) - pad * spread, means.max(0) + pad * spread


def cmd_gmm(args, out: RunDir) -> int:
    mixtures = _load_mixtures(args)
    K = len(mixtures)
    lam = _lambdas(args, K)
    cfg = _fp_config(args, default_gluing="product")
    init = initial_mixture(mixtures, args.n_components, args.seed)
    bary, trace = _run_stage("gmm fixed point", gmm_barycentre, mixtures, lam, args.n_components, cfg,
                             args.seed, init)
    out.write_json("barycentre_gmm.json", bary.to_dict())
    out.write_trace("trace.json", trace)
    two_d = mixtures[0].dim == 2
    if two_d:
        lo, hi = _mixture_box(mixtures)
        write_density_csv(out.path("density.csv"), density_grid(bary, lo, hi, args.grid_resolution))
    problem = gmm_problem(mixtures, lam)
    N = tuple_count(problem)
    if N <= args.budget:
        sol = _run_stage("gmm multi-marginal", gmm_mm_oracle, mixtures, lam, MMConfig(budget=args.budget))
        mm_gmm = GaussianMixture.from_measure(sol.barycentre, mixtures[0].dim)
        out.write_json("mm_barycentre_gmm.json", mm_gmm.to_dict())
        out.write_json("mm_comparison.json", {
            "objective": sol.objective,
            "fp_energy": trace.energies[-1],
            "energy_ratio": trace.energies[-1] / sol.objective if sol.objective > 0 else 1.0,
            "fp_at_least_objective": bool(trace.energies[-1] >= sol.objective - 1e-9),
        })
    else:
        print(f"notice: skipped multi-marginal comparison ({N} tuples exceed budget {args.budget})", file=sys.stderr)
    if args.interpolation:
        if K != 4:
            raise CliError("interpolation needs exactly four input mixtures (corners)", "config")
        g = args.interpolation
        lo, hi = _mixture_box(mixtures) if two_d else (None, None)
        rows = []
        for i, s in enumerate(np.linspace(0, 1, g)):
            for j, t in enumerate(np.linspace(0, 1, g)):
                w = bilinear_weights(s, t)
                b, tr = _run_stage(f"interpolation cell ({i},{j})", gmm_barycentre, mixtures, w,
                                   args.n_components, cfg, args.seed,
                                   initial_mixture([m for m, wk in zip(mixtures, w) if wk > 0],
                                                   args.n_components, args.seed))
                tag = f"interpolation/cell_{i}_{j}"
                out.write_json(f"{tag}.json", b.to_dict())
                out.write_trace(f"{tag}_trace.json", tr)
                if two_d:
                    write_density_csv(out.path(f"{tag}_density.csv"), density_grid(b, lo, hi, args.grid_resolution))
                mono = bool(np.all(np.diff(tr.energies) <= 1e-9))
                rows.append([i, j, s, t, *w, tr.energies[-1], mono])
        out.write_csv("interpolation/summary.csv",
                      ["i", "j", "s", "t", "w00", "w10", "w01", "w11", "energy", "monotone"], rows)
    return 0


COMMANDS = {
    "barycentre": cmd_barycentre,
    "match": cmd_match,
    "bench-support": cmd_bench_support,
    "bench-mm": cmd_bench_mm,
    "projection-demo": cmd_projection_demo,
    "gmm": cmd_gmm,
}


def _config_echo(args) -> dict:
    d = {k: v for k, v in sorted(vars(args).items()) if k != "config"}
    return json.loads(json.dumps(d, default=str))


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except CliError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = RunDir(args.out, args.deterministic)
    out.write_json("config.json", _config_echo(args))
    try:
        status = COMMANDS[args.command](args, out)
    except CliError as exc:
        print(f"error [{exc.stage or args.command}]: {exc}", file=sys.stderr)
        out.finish()
        return 1
    out.finish()
    return status


if __name__ == "__main__":
    sys.exit(main())
