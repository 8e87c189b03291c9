"""Command-line front end.

Every subcommand reads one JSON config, writes CSV/JSON (and Matrix Market)
artifacts to the output directory and exits 0 only when all of its pass/fail
flags hold.  The output directory is ``--out``, else ``$KUHNFEM_OUTPUT_DIR``,
else ``output.dir`` from the config, else ``kuhnfem_out``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .bv import BVFunction, bv_envelopes, jordan_decompose
from .config import ConfigError, ExperimentConfig, load_config
from .densities import density_from_dict, grid_for
from .forms import ResolventSolver, assemble, export_matrix_market, l2_inner, markov_check, semigroup, semigroup_exact
from .functionals import C_estimate, delta_estimate
from .mosco import gaussian_bv_experiment
from .seeding import task_rng
from .suites import basis_suite

log = logging.getLogger("kuhnfem")

ENV_OUTPUT = "KUHNFEM_OUTPUT_DIR"
EXIT_FAIL = 1
EXIT_CONFIG = 2


# ---------------------------------------------------------------- helpers


class _Run:
    """Shared state of one invocation: config, output directory, pool size, timing switch."""

    def __init__(self, cfg: ExperimentConfig, out: Path, threads: int, timings: bool):
        self.cfg, self.out, self.threads, self.timings = cfg, out, threads, timings
        self.t0 = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    @property
    def stamp(self) -> str:
        return f"config_sha256={self.cfg.sha256} seed={self.cfg.seed}"

    def map(self, fn: Callable, items: Sequence) -> list:
        """Ordered map over a worker pool; results never depend on the pool size."""
        if self.threads <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    def write_csv(self, name: str, fields: Sequence[str], rows: Sequence[dict]) -> Path:
        path = self.out / name
        with path.open("w", newline="") as fh:
            fh.write(f"# {self.stamp}\n")
            w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
            w.writeheader()
            for row in rows:
                w.writerow({k: _cell(row.get(k, "")) for k in fields})
        return path

    def write_json(self, name: str, doc: dict) -> Path:
        doc = {"config_sha256": self.cfg.sha256, "seed": self.cfg.seed, **doc}
        if self.timings:
            doc["runtime_ms"] = round(1000 * (time.perf_counter() - self.t0), 3)
        path = self.out / name
        path.write_text(json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n")
        return path

    def finish(self, flags: dict, summary_name: str, extra: dict | None = None) -> int:
        flags = {k: bool(v) for k, v in flags.items()}
        ok = all(flags.values())
        self.write_json(summary_name, {"flags": flags, "passed": ok, **(extra or {})})
        for k, v in flags.items():
            log.info("%s %s", "PASS" if v else "FAIL", k)
        return 0 if ok else EXIT_FAIL


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


class _ZeroCutoff:
    is_zero = True

    def __call__(self, x):
        return np.zeros(len(np.atleast_2d(x)))


def _kappa(spec: dict | None):
    spec = spec or {"kind": "one"}
    if spec["kind"] == "one":
        return None
    if spec["kind"] == "zero":
        return _ZeroCutoff()
    L = float(spec.get("L", 1.0))
    return lambda x: np.clip(L - np.max(np.abs(np.atleast_2d(x)), axis=1), 0.0, 1.0)


def _nodal_function(spec: dict | None) -> tuple[str, Callable]:
    spec = spec or {"name": "coordinate"}
    name, axis = spec["name"], int(spec.get("axis", 0))
    if name == "one":
        return "one", lambda X: np.ones(len(X))
    if name == "coordinate":
        return f"x{axis + 1}", lambda X: X[:, axis]
    if name == "bump":
        return "bump", lambda X: np.exp(-0.5 * np.sum(X * X, axis=1))
    return f"cos(x{axis + 1})", lambda X: np.cos(X[:, axis])


def _measure(run: _Run):
    doc = run.cfg.doc.get("measure")
    if doc is None:
        raise ConfigError(["/measure: this subcommand needs a measure section"])
    return density_from_dict(doc)


def _first_r(run: _Run) -> float:
    r = run.cfg.doc.get("grid", {}).get("r")
    if r is None:
        raise ConfigError(["/grid/r: this subcommand needs a mesh size"])
    return float(_as_list(r)[0])


def _form(run: _Run):
    rho = _measure(run)
    diag = run.cfg.doc.get("diagnostics", {})
    grid = grid_for(rho, _first_r(run))
    return assemble(grid, rho, order=int(diag.get("order", 6)), lump=bool(diag.get("lump", False)))


def _coord_fields(d: int) -> list[str]:
    return [f"x{k + 1} [length]" for k in range(d)]


def _nodal_rows(F, columns: dict[str, np.ndarray]) -> tuple[list[str], list[dict]]:
    fields = ["node [index]"] + _coord_fields(F.grid.d) + list(columns)
    rows = []
    for i, c in enumerate(F.coords):
        row = {"node [index]": i, **{f"x{k + 1} [length]": float(v) for k, v in enumerate(c)}}
        row.update({name: float(vals[i]) for name, vals in columns.items()})
        rows.append(row)
    return fields, rows


# ---------------------------------------------------------------- subcommands


def cmd_verify_basis(run: _Run) -> int:
    g = run.cfg.doc.get("grid", {})
    ds = [int(v) for v in _as_list(g.get("d", 2))]
    rs = [float(v) for v in _as_list(g.get("r", [1.0, 0.25]))]
    samples = int(g.get("samples", 100_000))
    vol = int(g.get("volume_samples", 200_000))
    hw = float(g.get("half_width", 2.0))
    tasks = [(d, r) for d in ds for r in rs]
    results = run.map(lambda t: basis_suite(t[0], t[1], run.cfg.seed, samples, vol, hw), tasks)
    rows, flags = [], {}
    for (d, r), checks in zip(tasks, results):
        for c in checks:
            rows.append({"d [1]": d, "r [length]": r, "check [name]": c.name, "value [1]": c.value,
                         "tolerance [1]": c.tol, "passed [flag]": c.passed, "detail [text]": c.detail})
            flags[f"d={d}/r={r!r}/{c.name}"] = c.passed
    run.write_csv("verify_basis.csv", ["d [1]", "r [length]", "check [name]", "value [1]", "tolerance [1]",
                                       "passed [flag]", "detail [text]"], rows)
    return run.finish(flags, "verify_basis.json")


def _sweep_point(rho, kappa, m: int):
    r = 1.0 / m
    de = delta_estimate(rho, kappa, r)
    with warnings.catch_warnings():
        # recorded in the CSV instead; catching per thread would not be deterministic
        warnings.simplefilter("ignore")
        ce = C_estimate(rho, kappa, r)
    notes = ["C supremum unsettled under sampling refinement"] if ce.flagged else []
    return r, de, ce, notes


def cmd_delta_sweep(run: _Run) -> int:
    rho = _measure(run)
    diag = run.cfg.doc.get("diagnostics", {})
    kappa = _kappa(diag.get("kappa"))
    ms = [int(m) for m in diag.get("m_schedule", [2, 4, 8, 16, 32, 64])]
    results = run.map(lambda m: _sweep_point(rho, kappa, m), ms)
    rows, deltas, Cs = [], [], []
    for m, (r, de, ce, notes) in zip(ms, results):
        for key in de.per_pair:
            rows.append({"m [1]": m, "r [length]": r, "pair [name]": key, "delta [1]": de.per_pair[key],
                         "C [1]": ce.per_pair.get(key, float("nan")), "warnings [text]": "; ".join(notes)})
        deltas.append(de.value)
        Cs.append(ce.value)
    run.write_csv("delta_sweep.csv", ["m [1]", "r [length]", "pair [name]", "delta [1]", "C [1]", "warnings [text]"], rows)
    decreasing = all(b < a or (a == 0.0 and b == 0.0) for a, b in zip(deltas, deltas[1:]))
    bounded = all(math.isfinite(c) and c <= 2 * Cs[0] for c in Cs) if Cs else True
    ratios = [b / a if a > 0 else 0.0 for a, b in zip(deltas, deltas[1:])]
    extra = {"m": ms, "delta_max": deltas, "C_max": Cs, "halving_ratios": ratios}
    return run.finish({"delta_decreasing": decreasing, "C_bounded": bounded}, "delta_sweep.json", extra)


def cmd_assemble(run: _Run) -> int:
    F = _form(run)
    export_matrix_market(F, run.out, comment=run.stamp)
    fields, rows = _nodal_rows(F, {"mass_row_sum [probability]": np.asarray(F.M.sum(axis=1)).reshape(-1)})
    run.write_csv("nodes.csv", fields, rows)
    S = F.S.tocoo()
    off = S.row != S.col
    max_off = float(S.data[off].max()) if np.any(off) else 0.0
    kernel = float(np.max(np.abs(F.S @ F.ones())))
    extra = {"nodes": F.n, "nnz_S": int(F.S.nnz), "nnz_M": int(F.M.nnz), "max_offdiag_S": max_off,
             "max_abs_S_times_one": kernel, "total_mass": float(F.ones() @ (F.M @ F.ones())), "lumped": F.lumped}
    flags = {"stiffness_offdiag_nonpositive": max_off <= 1e-14, "constants_in_kernel": kernel <= 1e-10}
    return run.finish(flags, "assemble.json", extra)


def cmd_resolvent(run: _Run) -> int:
    F = _form(run)
    diag = run.cfg.doc.get("diagnostics", {})
    alphas = [float(a) for a in diag.get("alpha", [0.5, 1.0, 2.0])]
    name, fn = _nodal_function(diag.get("f"))
    f = F.interpolate(fn)
    trials = int(diag.get("markov_trials", 1000))
    solvers = {a: ResolventSolver(F, a) for a in alphas}
    cols, flags, extra = {}, {}, {"alpha": alphas, "f": name, "resolvent_identity_rel": []}
    for a in alphas:
        cols[f"G[alpha={a!r}]({name}) [f-units]"] = solvers[a].solve(F.M @ f)
        rep = markov_check(F, a, trials=trials, seed=int(task_rng(run.cfg.seed, f"resolvent/markov/{a!r}").integers(2**31)))
        flags[f"sub_markov[alpha={a!r}]"] = rep.ok
        extra[f"markov[alpha={a!r}]"] = {"min": rep.min_value, "max": rep.max_value, "violations": rep.violations}
    rng = task_rng(run.cfg.seed, "resolvent/identity")
    for a, b in zip(alphas, alphas[1:]):
        v = rng.standard_normal(F.n)
        ga, gb = solvers[a].solve(F.M @ v), solvers[b].solve(F.M @ v)
        gab = solvers[a].solve(F.M @ gb)
        lhs, rhs = ga - gb, (b - a) * gab
        rel = math.sqrt(l2_inner(F, lhs - rhs)) / max(math.sqrt(l2_inner(F, lhs)), 1e-300)
        extra["resolvent_identity_rel"].append(rel)
        flags[f"resolvent_identity[{a!r},{b!r}]"] = rel <= 1e-8
    fields, rows = _nodal_rows(F, {"f [f-units]": f, **cols})
    run.write_csv("resolvent.csv", fields, rows)
    return run.finish(flags, "resolvent.json", extra)


def cmd_semigroup(run: _Run) -> int:
    F = _form(run)
    diag = run.cfg.doc.get("diagnostics", {})
    ts = [float(t) for t in diag.get("t", [0.5, 1.0])]
    steps = int(diag.get("steps", 64))
    name, fn = _nodal_function(diag.get("f"))
    f = F.interpolate(fn)
    lo, hi = float(f.min()), float(f.max())
    cols, flags, extra = {}, {}, {"t": ts, "f": name, "steps": steps, "richardson": [], "exact_gap": []}
    for t in ts:
        u, err = semigroup(F, t, f, n=steps, richardson=True)
        cols[f"T[t={t!r}]({name}) [f-units]"] = u
        extra["richardson"].append(err)
        flags[f"order_interval[t={t!r}]"] = bool(u.min() >= lo - 1e-9 and u.max() <= hi + 1e-9)
        if F.n <= 3000:
            ex = semigroup_exact(F, t, f)
            extra["exact_gap"].append(math.sqrt(max(l2_inner(F, u - ex), 0.0)))
    fields, rows = _nodal_rows(F, {"f [f-units]": f, **cols})
    run.write_csv("semigroup.csv", fields, rows)
    return run.finish(flags, "semigroup.json", extra)


def cmd_envelopes(run: _Run) -> int:
    b = run.cfg.doc.get("bv", {})
    f = BVFunction.from_dict(b.get("f", {"kind": "step", "at": 0.0}))
    ms = [int(m) for m in b.get("m_schedule", [2, 4, 8, 16, 32, 64])]
    n = int(b.get("points", 10_000))
    lo, hi = b.get("window", [-3.0, 3.0])
    rng = task_rng(run.cfg.seed, "envelopes/points")
    X = np.sort(np.concatenate([lo + (hi - lo) * rng.random(n), f.breaks]))
    fx = f(X)
    jumps = f.jump_points
    dist = np.min(np.abs(X[:, None] - jumps[None, :]), axis=1) if len(jumps) else np.full(len(X), np.inf)
    far = dist >= 0.25
    rows, gaps, viol = [], [], 0
    for m in ms:
        fmin, fmaj = bv_envelopes(f, m)
        a, c = fmin(X), fmaj(X)
        bad = int(np.count_nonzero((a > fx + 1e-12) | (fx > c + 1e-12)))
        viol += bad
        gap = float(np.max(c[far] - a[far])) if np.any(far) else 0.0
        gaps.append(gap)
        rows.append({"m [1]": m, "sandwich_violations [count]": bad, "max_gap_continuity [f-units]": gap,
                     "mean_gap [f-units]": float(np.mean(c - a))})
    run.write_csv("envelopes.csv", ["m [1]", "sandwich_violations [count]", "max_gap_continuity [f-units]",
                                    "mean_gap [f-units]"], rows)
    a0, f1, f2 = jordan_decompose(f)
    edges = np.concatenate([[lo - 1.0], f.breaks, [hi + 1.0]])
    mids = np.concatenate([np.linspace(p, q, 7)[1:-1] for p, q in zip(edges[:-1], edges[1:]) if q > p])
    jordan = float(np.max(np.abs(a0 + f1(mids) - f2(mids) - f(mids))))
    shrinking = all(q <= p + 1e-15 for p, q in zip(gaps, gaps[1:])) and (gaps[-1] <= 0.25 * gaps[0] or gaps[-1] <= 1e-12)
    flags = {"sandwich": viol == 0, "gap_shrinks": shrinking, "jordan_exact": jordan <= 1e-12,
             "jordan_parts_increasing": bool(np.all(np.diff(f1(X)) >= -1e-12) and np.all(np.diff(f2(X)) >= -1e-12))}
    extra = {"m": ms, "continuity_gaps": gaps, "jordan_max_error": jordan, "total_variation": f.total_variation}
    return run.finish(flags, "envelopes.json", extra)


def cmd_mosco(run: _Run) -> int:
    cfg = run.cfg.section("mosco")
    cfg["seed"] = run.cfg.seed
    report = gaussian_bv_experiment(cfg, progress=lambda msg: log.info("mosco: %s", msg))
    report.meta.pop("runtime_s", None)
    for name, table in [("report.csv", report.rows)] + [(f"report_{k}.csv", v) for k, v in sorted(report.tables.items())]:
        if table:
            keys = sorted({k for row in table for k in row})
            rows = [{_unit_name(k, row.get(k)): v for k, v in row.items()} for row in table]
            run.write_csv(name, [_unit_name(k, table[0].get(k)) for k in keys], rows)
    doc = report.to_dict()
    doc.pop("passed", None)
    flags = doc.pop("flags")
    return run.finish(flags, "report.json", doc)


_UNITS = {"N": "index", "coord": "index", "split": "index", "m": "1", "points_per_sigma": "nodes/sigma",
          "test": "name", "triple": "name"}


def _unit_name(key: str, value) -> str:
    """Column header ``key [unit]``; Mosco quantities are dimensionless apart from indices and flags."""
    if key in _UNITS:
        return f"{key} [{_UNITS[key]}]"
    if isinstance(value, (bool, np.bool_)):
        return f"{key} [flag]"
    return f"{key} [1]"


COMMANDS = {
    "verify-basis": (cmd_verify_basis, "triangulation, tent and tent-sum invariant suites"),
    "delta-sweep": (cmd_delta_sweep, "catalog delta and C estimates along r = 1/m"),
    "assemble": (cmd_assemble, "stiffness and mass matrices in Matrix Market format"),
    "resolvent": (cmd_resolvent, "resolvents, sub-Markov trials and the resolvent identity"),
    "semigroup": (cmd_semigroup, "implicit Euler semigroup with a Richardson estimate"),
    "mosco": (cmd_mosco, "Gaussian reference measure with a BV potential: convergence report"),
    "envelopes": (cmd_envelopes, "BV minorant/majorant sandwich and Jordan decomposition"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kuhnfem", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, type=Path, help="JSON experiment config")
        sp.add_argument("--out", type=Path, default=None, help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker pool size")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--timings", action="store_true", help="record runtime_ms in JSON summaries")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _output_dir(arg: Path | None, cfg: ExperimentConfig) -> Path:
    if arg is not None:
        return arg
    env = os.environ.get(ENV_OUTPUT)
    if env:
        return Path(env)
    return Path(cfg.doc.get("output", {}).get("dir", "kuhnfem_out"))


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.seed)
        run = _Run(cfg, _output_dir(args.out, cfg), args.threads, args.timings)
        code = COMMANDS[args.command][0](run)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status = "passed" if code == 0 else "FAILED"
    print(f"{args.command}: {status} (outputs in {run.out})")
    return code


if __name__ == "__main__":
    sys.exit(main())
