"""Batch front end: build approximations, solve systems, estimate log-dets.

One JSON record per run; numerical fields reproduce bit-for-bit under the
same seed (wall-clock timings are reported but excluded from that guarantee).
Exit codes: 0 success / suites passed, 1 verification failure, 2 bad
configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kaporin, kernels, solvers, sparsity, vecchia
from .core import PermutedOracle, PivotOrder, SparsityPattern, reconstruct_dense
from .errors import Breakdown, CholvecError, ConfigError, NonSPDFactor
from .partial import PivotChooser, choose_pivots
from .vecchia import ResidualOracle

SCHEMA_VERSION = 1
METHODS = ("pc+v", "vecchia", "frangella", "diaz")
PIVOT_RULES = ("rpc", "sds", "cpc", "fps", "adaptive", "natural")

_DENSE_KAPPA_LIMIT = 600


@dataclass
class RunConfig:
    """Everything one run needs; round-trips through the output record."""

    dataset: dict = field(default_factory=lambda: {"kind": "clusters", "n": 500,
                                                   "d": 3, "clusters": 4,
                                                   "spread": 0.2})
    mu: float = 1e-3
    method: str = "pc+v"
    pivots: str = "rpc"
    sparsity: str = "omp"
    r: object = "sqrt"  # int or "sqrt"
    q: object = 0  # int or "quarter" | "third"
    c: object = None  # int; default 10*q
    tol: float = 1e-4
    max_iter: int = 1000
    rhs: str = "kernel"  # kernel | labels
    n_rhs: int = 5
    samples: int = 10
    depth: int = 100
    depths: list | None = None
    seed: int = 0

    def validate(self):
        if self.mu < 0:
            raise ConfigError("mu", "must be nonnegative")
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {METHODS}")
        if self.pivots not in PIVOT_RULES:
            raise ConfigError("pivots", f"must be one of {PIVOT_RULES}")
        if self.sparsity not in ("omp", "nn"):
            raise ConfigError("sparsity", "must be 'omp' or 'nn'")
        if self.tol <= 0:
            raise ConfigError("tol", "must be positive")
        if self.max_iter < 0:
            raise ConfigError("max_iter", "must be nonnegative")
        if self.samples < 0:
            raise ConfigError("samples", "must be nonnegative")
        if self.rhs not in ("kernel", "labels"):
            raise ConfigError("rhs", "must be 'kernel' or 'labels'")
        kind = self.dataset.get("kind")
        if kind not in ("clusters", "csv"):
            raise ConfigError("dataset.kind", "must be 'clusters' or 'csv'")

    def derive(self, n):
        """Resolve the r/q/c rules against the dataset size."""
        r = int(math.isqrt(n)) if self.r == "sqrt" else int(self.r)
        if self.q == "quarter":
            q = int(math.floor(n ** 0.25))
        elif self.q == "third":
            q = int(math.floor(n ** (1.0 / 3.0)))
        else:
            q = int(self.q)
        c = int(self.c) if self.c is not None else 10 * q
        if not 0 <= r <= n:
            raise ConfigError("r", f"resolved to {r}, outside [0, {n}]")
        if q < 0:
            raise ConfigError("q", f"resolved to {q}, must be nonnegative")
        if c != 0 and c < q:
            raise ConfigError("c", f"resolved to {c}, must be 0 or >= q={q}")
        return r, q, c


def _load_dataset(config: RunConfig) -> kernels.Dataset:
    ds = config.dataset
    if ds["kind"] == "clusters":
        return kernels.synthetic_clusters(
            int(ds.get("n", 500)), int(ds.get("d", 3)), int(ds.get("clusters", 4)),
            float(ds.get("spread", 0.2)), seed=int(ds.get("seed", config.seed)),
        )
    return kernels.load_csv(
        ds["path"], n_max=ds.get("n_max"), label_column=ds.get("label_column"),
        full_file_stats=bool(ds.get("full_file_stats", False)),
    )


def _build_approximation(config: RunConfig, data, oracle):
    """Build the configured preconditioner; returns (kind, object, stats)."""
    n = oracle.n
    r, q, c = config.derive(n)
    stats = {"n": n, "d": data.d, "r": r, "q": q, "c": c}
    timings = {}
    t0 = time.perf_counter()
    if config.pivots == "natural":
        chooser = PivotChooser.fixed(PivotOrder.identity(n))
    elif config.pivots == "adaptive":
        chooser = PivotChooser.adaptive()
    else:
        chooser = PivotChooser(config.pivots, seed=config.seed)

    if config.method in ("frangella", "diaz"):
        # comparators approximate the ridge-free kernel block
        base = kernels.kernel_oracle(data, kernels.KernelSpec(0.0))
        order, part = choose_pivots(base, chooser, r)
        timings["pivots"] = time.perf_counter() - t0
        make = (solvers.frangella_preconditioner if config.method == "frangella"
                else solvers.diaz_preconditioner)
        precond = make(part, config.mu)
        stats["lookup_count"] = base.lookup_count
        stats["stage_seconds"] = timings
        return "comparator", precond, stats

    if config.method == "vecchia":
        order = PivotOrder.identity(n)
        view = PermutedOracle(oracle, order)
        t1 = time.perf_counter()
        chooser_s = sparsity.SparsityChooser(config.sparsity, q, c, seed=config.seed)
        pattern = sparsity.build_residual_pattern(view, view, chooser_s, 0)
        timings["pattern"] = time.perf_counter() - t1
        t1 = time.perf_counter()
        factor = vecchia.build_vecchia(oracle, order, pattern)
        timings["rows"] = time.perf_counter() - t1
        stats["lookup_count"] = oracle.lookup_count
        stats["stage_seconds"] = timings
        return "factor", factor, stats

    # pc+v: partial Cholesky then Vecchia residual rows
    order, part, state = choose_pivots(oracle, chooser, r, collect_state=True)
    timings["pivots"] = time.perf_counter() - t0
    r_built = part.rank
    if q == 0:
        # residual diagonal comes free from the chooser state
        t1 = time.perf_counter()
        factor = _pc_diag_factor(order, part, state)
        timings["rows"] = time.perf_counter() - t1
    else:
        t1 = time.perf_counter()
        view = PermutedOracle(oracle, order)
        res_view = PermutedOracle(ResidualOracle(oracle, part), order)
        chooser_s = sparsity.SparsityChooser(config.sparsity, q, c, seed=config.seed)
        res_diag = np.maximum(state.residual_diag[order.perm], 0.0)
        pattern = sparsity.build_residual_pattern(
            view, res_view, chooser_s, r_built,
            diag_full=view.diagonal(), diag_res=res_diag,
        )
        timings["pattern"] = time.perf_counter() - t1
        t1 = time.perf_counter()
        factor = vecchia.build_hybrid(oracle, order, r_built, pattern)
        timings["rows"] = time.perf_counter() - t1
    stats["rank_built"] = r_built
    stats["lookup_count"] = oracle.lookup_count
    stats["stage_seconds"] = timings
    return "factor", factor, stats


def _pc_diag_factor(order, part, state):
    """Hybrid with an empty residual pattern, diagonal read off the state."""
    n = order.n
    r = part.rank
    from .vecchia import _invert_unit_lower

    l11_inv = _invert_unit_lower(part.lower[:r, :r])
    w = part.lower[r:, :r] @ l11_inv
    sets, rows = [], []
    diag = np.zeros(n)
    diag[:r] = part.diag
    for i in range(r):
        sets.append(np.arange(i))
        rows.append(l11_inv[i, :i].copy())
    res_diag = state.residual_diag[order.perm]
    for i in range(r, n):
        sets.append(np.arange(r))
        rows.append(-w[i - r].copy())
        diag[i] = max(float(res_diag[i]), 0.0)
    from .core import VecchiaFactor

    return VecchiaFactor(order, SparsityPattern(sets), tuple(rows), diag)


def _log_kappa_record(oracle, factor):
    if factor is None or oracle.n > _DENSE_KAPPA_LIMIT:
        return None
    report = kaporin.kappa_from_factor(oracle, factor, dense_limit=_DENSE_KAPPA_LIMIT)
    return None if report.infinite else report.log_kappa


def cmd_approximate(config: RunConfig, factor_path=None, with_kappa=True):
    data = _load_dataset(config)
    oracle = kernels.kernel_oracle(data, kernels.KernelSpec(config.mu))
    kind, obj, stats = _build_approximation(config, data, oracle)
    record = _record("approximate", config, stats)
    if kind == "factor":
        if with_kappa:
            record["results"]["log_kappa"] = _log_kappa_record(
                kernels.kernel_oracle(data, kernels.KernelSpec(config.mu)), obj
            )
        if factor_path:
            vecchia.save_factor(obj, factor_path)
            record["results"]["factor_file"] = str(factor_path)
    return record


def cmd_solve(config: RunConfig):
    data = _load_dataset(config)
    oracle = kernels.kernel_oracle(data, kernels.KernelSpec(config.mu))
    _, precond, stats = _build_approximation(config, data, oracle)
    a = kernels.kernel_matrix(data, kernels.KernelSpec(config.mu))
    if config.rhs == "labels":
        if data.labels is None:
            raise ConfigError("rhs", "dataset provides no labels")
        rhs = data.labels[None, :].copy()
    else:
        rhs = kernels.kernel_response_vectors(
            data, kernels.KernelSpec(config.mu), config.n_rhs, seed=config.seed + 1
        )
    record = _record("solve", config, stats)
    runs = []
    for idx, b in enumerate(rhs):
        if not np.any(b):
            runs.append({"rhs_index": idx, "iterations": 0,
                         "relative_residual": 0.0, "converged": True,
                         "residual_history": [0.0]})
            continue
        try:
            trace = solvers.pcg(lambda v: a @ v, precond, b,
                                tol=config.tol, max_iter=config.max_iter)
        except Breakdown as exc:
            raise Breakdown(f"rhs {idx}: {exc}") from exc
        bnorm = float(np.linalg.norm(b))
        runs.append({
            "rhs_index": idx,
            "iterations": trace.iterations,
            "relative_residual": trace.residual_norms[-1] / bnorm,
            "converged": trace.termination in ("tol", "zero_rhs"),
            "residual_history": [v / bnorm for v in trace.residual_norms],
        })
    record["results"]["rhs"] = runs
    return record


def cmd_logdet(config: RunConfig):
    data = _load_dataset(config)
    oracle = kernels.kernel_oracle(data, kernels.KernelSpec(config.mu))
    kind, factor, stats = _build_approximation(config, data, oracle)
    if kind != "factor":
        raise ConfigError("method", "log-determinant needs a factored method")
    a = kernels.kernel_matrix(data, kernels.KernelSpec(config.mu))
    record = _record("logdet", config, stats)
    results = record["results"]
    results["direct"] = vecchia.logdet_direct(factor)
    n = factor.n
    if config.samples > 0:
        est = solvers.logdet_stochastic(
            lambda v: a @ v, factor, config.samples, min(config.depth, n),
            seed=config.seed,
        )
        results["s_t"] = est.s_t
        results["estimate"] = est.estimate
        results["normalized_estimate"] = est.estimate / n
        results["per_sample"] = est.sample_values.tolist()
    else:
        results["estimate"] = results["direct"]
        results["normalized_estimate"] = results["direct"] / n
    if config.depths:
        sweep = {}
        for m in config.depths:
            m_eff = n if m in ("full", "n") else min(int(m), n)
            est = solvers.logdet_stochastic(
                lambda v: a @ v, factor, max(config.samples, 1), max(m_eff, 2),
                seed=config.seed,
            )
            sweep[str(m)] = {"depth": m_eff, "s_t": est.s_t, "estimate": est.estimate}
        results["depth_sweep"] = sweep
    return record


def _record(command, config: RunConfig, stats):
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": asdict(config),
        "results": dict(stats),
    }


# -- verification suites ----------------------------------------------------

def _random_spd(rng, n):
    basis, _ = np.linalg.qr(rng.standard_normal((n, n)))
    evals = rng.uniform(0.5, 5.0, n)
    a = (basis * evals) @ basis.T
    return 0.5 * (a + a.T)


def _random_hybrid_setup(rng, n, max_q=4):
    r = int(rng.integers(0, n + 1))
    sets = []
    for i in range(n):
        pool = np.arange(r, i)
        if i < r or pool.size == 0:
            sets.append(np.empty(0, dtype=np.intp))
        else:
            k = int(rng.integers(0, min(max_q, pool.size) + 1))
            sets.append(rng.choice(pool, size=k, replace=False))
    return r, SparsityPattern(sets)


def _suite_equivalence(seed, count=30, perturb=0.0):
    from .core import DenseOracle

    rng = np.random.default_rng(seed)
    worst, cases = 0.0, []
    for case in range(count):
        n = int(rng.integers(5, 51))
        a = _random_spd(rng, n)
        r, pattern = _random_hybrid_setup(rng, n)
        oracle = DenseOracle(a)
        order = PivotOrder(rng.permutation(n))
        hybrid = vecchia.build_hybrid(oracle, order, r, pattern)
        if perturb:
            hybrid = _perturb_factor(hybrid, rng, perturb)
        direct = vecchia.build_vecchia(
            DenseOracle(a), order, vecchia.augment_pattern(r, pattern)
        )
        disc = _factor_discrepancy(hybrid, direct)
        worst = max(worst, disc)
        cases.append({"case": case, "n": n, "r": r, "discrepancy": disc})
    passed = worst <= 1e-8
    return {"suite": "equivalence", "passed": bool(passed),
            "worst_margin": worst, "threshold": 1e-8, "cases": cases,
            "failed_invariant": None if passed else "hybrid equals direct construction"}


def _factor_discrepancy(fa, fb):
    worst = 0.0
    for ca, cb in zip(fa.rows, fb.rows):
        if cb.size:
            worst = max(worst, float(np.max(np.abs(ca - cb)))
                        / (1.0 + float(np.max(np.abs(cb)))))
    worst = max(worst, float(np.max(np.abs(fa.diag - fb.diag) / (1.0 + np.abs(fb.diag)))))
    da, db = reconstruct_dense(fa), reconstruct_dense(fb)
    return max(worst, float(np.max(np.abs(da - db))) / (1.0 + float(np.max(np.abs(db)))))


def _perturb_factor(factor, rng, rel):
    from .core import VecchiaFactor

    rows = tuple(
        r + rel * rng.standard_normal(r.size) * (1.0 + np.abs(r)) for r in factor.rows
    )
    diag = factor.diag * (1.0 + rel * rng.uniform(0.5, 1.0, factor.n))
    return VecchiaFactor(factor.order, factor.pattern, rows, diag)


def _suite_optimality(seed, count=5, trials=200, perturb=0.0):
    from .core import DenseOracle, VecchiaFactor

    rng = np.random.default_rng(seed)
    worst, cases = np.inf, []
    for case in range(count):
        n = int(rng.integers(8, 31))
        a = _random_spd(rng, n)
        order = PivotOrder(rng.permutation(n))
        pattern = SparsityPattern(
            [rng.choice(i, size=int(rng.integers(0, min(i, 4) + 1)), replace=False)
             if i else [] for i in range(n)]
        )
        factor = vecchia.build_vecchia(DenseOracle(a), order, pattern)
        if perturb:
            factor = _perturb_factor(factor, rng, perturb)
        base = kaporin.kappa_from_dense(a, reconstruct_dense(factor)).log_kappa
        margin = np.inf
        for _ in range(trials):
            rel = 10.0 ** rng.uniform(-4, -0.5)
            trial = _perturb_factor(factor, rng, rel)
            other = kaporin.kappa_from_dense(a, reconstruct_dense(trial)).log_kappa
            margin = min(margin, other - base)
        worst = min(worst, margin)
        cases.append({"case": case, "n": n, "worst_margin": margin})
    passed = worst >= -1e-9
    return {"suite": "optimality", "passed": bool(passed), "worst_margin": worst,
            "threshold": -1e-9, "cases": cases,
            "failed_invariant": None if passed else "factor minimizes the condition number"}


def _suite_bounds(seed, count=6, perturb=0.0):
    from .core import DenseOracle

    rng = np.random.default_rng(seed)
    worst, cases = 0.0, []
    for case in range(count):
        n = int(rng.integers(20, 61))
        a = _random_spd(rng, n)
        order = PivotOrder.identity(n)
        r, pattern = _random_hybrid_setup(rng, n, max_q=3)
        factor = vecchia.build_hybrid(DenseOracle(a), order, r, pattern)
        if perturb:
            factor = _perturb_factor(factor, rng, perturb)
        report = kaporin.kappa_from_factor(DenseOracle(a), factor)
        gap = abs(vecchia.logdet_direct(factor) - np.linalg.slogdet(a)[1]
                  - report.log_kappa)
        worst = max(worst, gap)
        cases.append({"case": case, "n": n, "identity_gap": gap})
    passed = worst <= 1e-8
    return {"suite": "bounds", "passed": bool(passed), "worst_margin": worst,
            "threshold": 1e-8, "cases": cases,
            "failed_invariant": None if passed else "log-determinant identity"}


def _suite_fps(seed, count=8, perturb=0.0):
    from .core import DenseOracle
    from .partial import verify_fps_ratio

    rng = np.random.default_rng(seed)
    worst, cases = 0.0, []
    for case in range(count):
        n = int(rng.integers(6, 11))
        a = _random_spd(rng, n)
        r = int(rng.integers(2, 4))
        ratio = verify_fps_ratio(DenseOracle(a), r, seed=int(rng.integers(2**31)))
        ratio += perturb  # negative-control hook
        worst = max(worst, ratio)
        cases.append({"case": case, "n": n, "r": r, "ratio": ratio})
    passed = worst <= 2.0 + 1e-9
    return {"suite": "fps", "passed": bool(passed), "worst_margin": worst,
            "threshold": 2.0 + 1e-9, "cases": cases,
            "failed_invariant": None if passed else "greedy max-min 2-approximation"}


_SUITES = {
    "equivalence": _suite_equivalence,
    "optimality": _suite_optimality,
    "bounds": _suite_bounds,
    "fps": _suite_fps,
}


def cmd_verify(suite: str, seed: int = 0, perturb: float = 0.0):
    if suite not in _SUITES:
        raise ConfigError("suite", f"must be one of {sorted(_SUITES)}")
    report = _SUITES[suite](seed, perturb=perturb)
    return {"schema_version": SCHEMA_VERSION, "command": "verify",
            "config": {"suite": suite, "seed": seed, "perturb": perturb},
            "results": report}


# -- argument parsing ---------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON file with a full run configuration")
    p.add_argument("--synthetic", type=int, metavar="N",
                   help="synthetic cluster dataset with N points")
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--spread", type=float, default=0.2)
    p.add_argument("--csv", help="CSV dataset path")
    p.add_argument("--n-max", type=int)
    p.add_argument("--label-col", help="label column name or 0-based index")
    p.add_argument("--mu", type=float, default=1e-3)
    p.add_argument("--method", default="pc+v", choices=METHODS)
    p.add_argument("--pivots", default="rpc", choices=PIVOT_RULES)
    p.add_argument("--sparsity", default="omp", choices=("omp", "nn"))
    p.add_argument("--r", default="sqrt")
    p.add_argument("--q", default="0")
    p.add_argument("--c", type=int)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--rhs", default="kernel", choices=("kernel", "labels"))
    p.add_argument("--n-rhs", type=int, default=5)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--depth", type=int, default=100)
    p.add_argument("--depths", help="comma list for the depth sweep, e.g. 5,20,full")
    p.add_argument("--seed", type=int,
                   default=int(os.environ.get("CHOLVEC_SEED", "0")))
    p.add_argument("--out", help="write the JSON record here instead of stdout")
    p.add_argument("--table", help="write a CSV convergence table here (solve)")


def _int_or_rule(value, rules):
    if value in rules:
        return value
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError("r/q", f"expected an integer or one of {rules}, got {value!r}")


def _config_from_args(args) -> RunConfig:
    if args.config:
        with open(args.config) as handle:
            payload = json.load(handle)
        try:
            config = RunConfig(**payload)
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from None
    else:
        if args.csv:
            dataset = {"kind": "csv", "path": args.csv, "n_max": args.n_max,
                       "label_column": _maybe_int(args.label_col)}
        else:
            n = args.synthetic if args.synthetic else 500
            dataset = {"kind": "clusters", "n": n, "d": args.dim,
                       "clusters": args.clusters, "spread": args.spread,
                       "seed": args.seed}
        depths = None
        if args.depths:
            depths = [d if d in ("full", "n") else int(d)
                      for d in args.depths.split(",")]
        config = RunConfig(
            dataset=dataset, mu=args.mu, method=args.method, pivots=args.pivots,
            sparsity=args.sparsity, r=_int_or_rule(args.r, ("sqrt",)),
            q=_int_or_rule(args.q, ("quarter", "third")), c=args.c, tol=args.tol,
            max_iter=args.max_iter, rhs=args.rhs, n_rhs=args.n_rhs,
            samples=args.samples, depth=args.depth, depths=depths, seed=args.seed,
        )
    config.validate()
    return config


def _maybe_int(value):
    if value is None:
        return None
    try:
        return int(value)
    except ValueError:
        return value


def _emit(record, args):
    text = json.dumps(record, indent=2, allow_nan=True)
    if getattr(args, "out", None):
        with open(args.out, "w") as handle:
            handle.write(text + "\n")
    else:
        print(text)
    table = getattr(args, "table", None)
    if table and record["command"] == "solve":
        with open(table, "w") as handle:
            handle.write("rhs_index,iteration,relative_residual\n")
            for run in record["results"]["rhs"]:
                for t, res in enumerate(run["residual_history"]):
                    handle.write(f"{run['rhs_index']},{t},{res!r}\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cholvec",
        description="Factored PSD approximations: build, solve, estimate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("approximate", "solve", "logdet"):
        p = sub.add_parser(name)
        _add_common(p)
        if name == "approximate":
            p.add_argument("--factor-file", help="serialize the factor here")
            p.add_argument("--no-kappa", action="store_true",
                           help="skip the log-kappa computation")
    pv = sub.add_parser("verify")
    pv.add_argument("suite", choices=sorted(_SUITES))
    pv.add_argument("--seed", type=int,
                    default=int(os.environ.get("CHOLVEC_SEED", "0")))
    pv.add_argument("--perturb", type=float, default=0.0,
                    help="negative control: corrupt factors by this much")
    pv.add_argument("--out")
    args = parser.parse_args(argv)

    try:
        if args.command == "verify":
            record = cmd_verify(args.suite, seed=args.seed, perturb=args.perturb)
            _emit(record, args)
            return 0 if record["results"]["passed"] else 1
        config = _config_from_args(args)
        if args.command == "approximate":
            record = cmd_approximate(config, factor_path=args.factor_file,
                                     with_kappa=not args.no_kappa)
        elif args.command == "solve":
            record = cmd_solve(config)
        else:
            record = cmd_logdet(config)
        _emit(record, args)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (Breakdown, NonSPDFactor, CholvecError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
