"""Convergence diagnostics over sequences of discretised measures.

Generic tools (sections, sandwich, M1/M2 diagnostics) act on
:class:`~kuhnfem.forms.FormMatrices`.  The Gaussian experiment with a BV
potential exploits the product structure: every coordinate gets its own 1-d
form, the ``D``-dimensional space is the tensor product of the 1-d tent
spaces, and all resolvent and energy quantities of product test functions
reduce to 1-d eigendecompositions plus one integral in time.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import integrate
from scipy.special import roots_legendre

from .bv import BVFunction, bv_envelopes, exact_partition_function, gaussian_factor, jordan_decompose, partition_function
from .densities import BVPerturbedDensity, Density, GaussianDensity, grid_for
from .forms import FormMatrices, assemble, energy, generalized_eigs, l2_inner, markov_check, resolvent
from .functionals import C_estimate, delta_estimate, mopert_bound
from .quadrature import kuhn_cell_rule
from .seeding import task_rng
from .tents import local_basis

__all__ = [
    "ConvergenceReport",
    "SectionEntry",
    "SectionSeries",
    "embed_test",
    "strong_convergence_check",
    "sandwich_check",
    "m2_recovery_diagnostic",
    "m1_liminf_diagnostic",
    "PROFILES",
    "TestFunction",
    "gaussian_bv_experiment",
    "condition_mucken_sweep",
    "DEFAULT_EXPERIMENT",
]


# ---------------------------------------------------------------- reports


@dataclass
class ConvergenceReport:
    """Per-N rows, named pass/fail flags and free-form tables."""

    rows: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.flags.values()) and bool(self.flags)

    def failed_flags(self) -> list[str]:
        return [k for k, v in self.flags.items() if not v]

    def to_dict(self) -> dict:
        return _jsonable({"rows": self.rows, "flags": self.flags, "tables": self.tables, "meta": self.meta,
                          "passed": self.passed})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def rows_csv(self, comment: str = "") -> str:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        if self.rows:
            keys = sorted({k for row in self.rows for k in row})
            w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for row in self.rows:
                w.writerow({k: _fmt(row.get(k, "")) for k in keys})
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return repr(obj)
        return obj
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _tail(values: Sequence[float]) -> list[float]:
    """Last ``ceil(n/2)`` entries."""
    n = len(values)
    return list(values[n - math.ceil(n / 2):])


def _nonincreasing(values: Sequence[float], slack: float = 0.0) -> bool:
    return all(b <= a + slack for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------- sections


def embed_test(phi: Callable[[np.ndarray], np.ndarray], F: FormMatrices) -> np.ndarray:
    """Nodal interpolation ``Psi_N phi`` onto the nodes of ``F``."""
    return F.interpolate(phi)


@dataclass
class SectionEntry:
    """One member of a section: a vector, the mass matrix defining its ``L^2`` and embedded tests."""

    N: float
    u: np.ndarray
    M: object
    tests: dict

    def pairing(self, name: str) -> float:
        return float(self.u @ (self.M @ self.tests[name]))

    def norm(self) -> float:
        return math.sqrt(max(float(self.u @ (self.M @ self.u)), 0.0))


@dataclass
class SectionSeries:
    entries: list
    limit: SectionEntry


def strong_convergence_check(series: SectionSeries, tests: Sequence[str] | None = None,
                             tol: float = 5e-3) -> ConvergenceReport:
    """Pairing gaps against every test and the norm gap, per N.

    ``weak`` requires the pairing gaps in the tail to fall below ``tol``;
    ``strong`` additionally requires the norm gap to do so.
    """
    names = list(tests or series.limit.tests.keys())
    lim_pair = {n: series.limit.pairing(n) for n in names}
    lim_norm = series.limit.norm()
    rows = []
    for e in series.entries:
        row = {"N": e.N, "norm": e.norm(), "norm_gap": abs(e.norm() - lim_norm)}
        for n in names:
            p = e.pairing(n)
            row[f"pair[{n}]"] = p
            row[f"gap[{n}]"] = abs(p - lim_pair[n])
        row["max_pair_gap"] = max(row[f"gap[{n}]"] for n in names) if names else 0.0
        rows.append(row)
    tail = _tail(rows)
    weak = all(r["max_pair_gap"] <= tol for r in tail)
    strong = weak and all(r["norm_gap"] <= tol for r in tail)
    rep = ConvergenceReport(rows, {"weak": weak, "strong": strong})
    rep.meta = {"limit_norm": lim_norm, "limit_pairings": lim_pair, "tol": tol}
    return rep


def sandwich_check(g: SectionSeries, minorants: Sequence[np.ndarray], majorants: Sequence[np.ndarray],
                   tests: Sequence[str] | None = None, tol: float = 5e-3, slack: float = 1e-12) -> ConvergenceReport:
    """Check ``f_N <= g_N <= F_N`` entrywise, then strong convergence of ``g_N``."""
    violation = None
    for e, lo, hi in zip(g.entries, minorants, majorants):
        if np.any(np.asarray(lo) > e.u + slack):
            violation = f"minorant exceeds g at N={e.N}"
            break
        if np.any(e.u > np.asarray(hi) + slack):
            violation = f"g exceeds majorant at N={e.N}"
            break
    if violation is not None:
        rep = ConvergenceReport([], {"hypothesis": False})
        rep.meta["violation"] = violation
        return rep
    rep = strong_convergence_check(g, tests, tol)
    rep.flags = {"hypothesis": True, "strong": rep.flags["strong"]}
    return rep


def _dense_energy(u_grad: Callable, rho: Callable, grid, order: int = 4) -> float:
    """``int |grad u|^2 rho`` by Kuhn-cell quadrature on ``grid``."""
    d, r = grid.d, grid.r
    P, W = kuhn_cell_rule(d, order)
    Pf = P.reshape(-1, d)
    Wf = np.tile(W, P.shape[0]) * r ** d
    total = 0.0
    anchors = grid.cube_anchors()
    step = max(1, 200_000 // len(Pf))
    for s in range(0, len(anchors), step):
        X = (r * (anchors[s:s + step, None, :] + Pf[None])).reshape(-1, d)
        G = np.asarray(u_grad(X), dtype=float).reshape(len(X), d)
        total += float((np.sum(G * G, axis=1) * rho(X)) @ np.tile(Wf, min(step, len(anchors) - s)))
    return total


def m2_recovery_diagnostic(u: Callable, u_grad: Callable, sequence: Sequence[tuple[float, FormMatrices]],
                           rho_limit: Callable, reference_grid, tol: float = 5e-3) -> ConvergenceReport:
    """Energies of nodal interpolants against a dense-quadrature limit energy."""
    e_inf = _dense_energy(u_grad, rho_limit, reference_grid)
    rows = []
    for N, F in sequence:
        e = energy(F, embed_test(u, F))
        rows.append({"N": N, "energy": e, "gap": abs(e - e_inf)})
    gaps = [r["gap"] for r in rows]
    flags = {"tail_gap": gaps[-1] <= tol, "tail_trend": _nonincreasing(_tail(gaps), slack=tol / 10)}
    return ConvergenceReport(rows, flags, meta={"limit_energy": e_inf})


def m1_liminf_diagnostic(f: Callable, alpha: float, sequence: Sequence[tuple[float, FormMatrices]],
                         reference: FormMatrices, tests: Mapping[str, Callable] | None = None,
                         tol: float = 1e-3, pair_tol: float = 5e-3) -> ConvergenceReport:
    """Liminf inequality for ``u_N = G_alpha^N Psi_N f`` against the reference resolvent."""
    u_ref = resolvent(reference, alpha, embed_test(f, reference))
    e_ref = energy(reference, u_ref)
    tests = dict(tests or {})
    ref_pairs = {n: l2_inner(reference, u_ref, embed_test(psi, reference)) for n, psi in tests.items()}
    rows = []
    for N, F in sequence:
        uN = resolvent(F, alpha, embed_test(f, F))
        row = {"N": N, "energy": energy(F, uN)}
        for n, psi in tests.items():
            row[f"gap[{n}]"] = abs(l2_inner(F, uN, embed_test(psi, F)) - ref_pairs[n])
        rows.append(row)
    energies = [r["energy"] for r in rows]
    for i, row in enumerate(rows):
        row["slack"] = min(energies[i:]) - e_ref
    flags = {"liminf": all(r["slack"] >= -tol for r in rows)}
    if tests:
        flags["pairings"] = all(row[f"gap[{n}]"] <= pair_tol for row in _tail(rows) for n in tests)
    return ConvergenceReport(rows, flags, meta={"reference_energy": e_ref, "reference_pairings": ref_pairs})


# ---------------------------------------------------------------- product experiment

PROFILES: dict[str, tuple[Callable, Callable]] = {
    "bump": (lambda z: np.exp(-0.5 * z * z), lambda z: -z * np.exp(-0.5 * z * z)),
    "cos": (np.cos, lambda z: -np.sin(z)),
    "sin": (lambda z: 1.0 + 0.5 * np.sin(z), lambda z: 0.5 * np.cos(z)),
    "polybump": (lambda z: (1.0 + z) * np.exp(-0.5 * z * z), lambda z: (1.0 - z - z * z) * np.exp(-0.5 * z * z)),
    "tanh": (lambda z: 1.0 + 0.5 * np.tanh(z), lambda z: 0.5 / np.cosh(z) ** 2),
}


@dataclass(frozen=True)
class TestFunction:
    """``x -> prod_k p(a_k x_k + b)`` for a named profile ``p``.

    ``a_k = scale / sigma_k`` when ``relative`` (coordinates measured in
    standard deviations) and ``a_k = scale`` otherwise.
    """

    __test__ = False  # not a pytest class

    name: str
    profile: str
    scale: float = 1.0
    shift: float = 0.0
    relative: bool = False

    def factor(self, k: int, sigma: np.ndarray) -> tuple[Callable, Callable]:
        p, dp = PROFILES[self.profile]
        a = self.scale / sigma[k] if self.relative else self.scale
        b = self.shift
        return (lambda x: p(a * np.asarray(x) + b)), (lambda x: a * dp(a * np.asarray(x) + b))

    def __call__(self, x: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.ones(len(x))
        for k in range(x.shape[1]):
            out *= self.factor(k, sigma)[0](x[:, k])
        return out

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TestFunction":
        if doc["profile"] not in PROFILES:
            raise ValueError(f"unknown profile {doc['profile']!r}")
        return cls(doc["name"], doc["profile"], float(doc.get("scale", 1.0)), float(doc.get("shift", 0.0)),
                   bool(doc.get("relative", False)))


def _gauss_segments(lo: float, hi: float, breaks: np.ndarray, pieces: int = 48, n: int = 20):
    edges = np.union1d(np.linspace(lo, hi, pieces + 1), breaks[(breaks > lo) & (breaks < hi)])
    x, w = roots_legendre(n)
    a, b = edges[:-1, None], edges[1:, None]
    X = (0.5 * (b - a) * x[None] + 0.5 * (a + b)).reshape(-1)
    Wt = (0.5 * (b - a) * w[None]).reshape(-1)
    return X, Wt


class _Coordinate:
    """One coordinate factor: its 1-d density, discretisation and eigenbasis."""

    def __init__(self, sigma: float, lam: float, f: BVFunction, perturbed: bool, points_per_sigma: int):
        base = GaussianDensity([0.0], [sigma * sigma])
        self.sigma, self.lam, self.f = sigma, lam, f
        self.perturbed = perturbed and lam > 0
        self.density: Density = BVPerturbedDensity(base, f, [lam]) if self.perturbed else base
        self.r = sigma / points_per_sigma
        self.grid = grid_for(self.density, self.r)
        self.F = assemble(self.grid, self.density)
        self._eig = None
        lo, hi = float(self.density.lower[0]), float(self.density.upper[0])
        self._qx, self._qw = _gauss_segments(lo, hi, f.breaks)
        self._qw = self._qw * self.density.pdf(self._qx[:, None])

    @property
    def eig(self):
        if self._eig is None:
            lam, V = generalized_eigs(self.F)
            self._eig = (np.maximum(lam, 0.0), V)
        return self._eig

    def nodal(self, fn: Callable) -> np.ndarray:
        return np.asarray(fn(self.F.coords[:, 0]), dtype=float)

    def coeffs(self, fn: Callable) -> np.ndarray:
        _, V = self.eig
        return V.T @ (self.F.M @ self.nodal(fn))

    def expect(self, fn: Callable) -> float:
        """Continuum ``int fn d nu_k``."""
        return float(np.asarray(fn(self._qx), dtype=float) @ self._qw)


def _t_integral(fn: Callable[[float], float], alpha: float) -> float:
    """``int_0^inf fn(t) dt`` for integrands carrying ``exp(-alpha t)``."""
    t_end = 60.0 / alpha
    pts = [0.0] + [10.0 ** k for k in range(-8, 3) if 10.0 ** k < t_end] + [t_end]
    total = 0.0
    for a, b in zip(pts, pts[1:]):
        val, _ = integrate.quad(fn, a, b, epsabs=1e-14, epsrel=1e-11, limit=400)
        total += val
    return total


def _resolvent_pairing(coords, cf, cpsi, alpha: float) -> float:
    lams = [c.eig[0] for c in coords]
    amps = [a * b for a, b in zip(cf, cpsi)]

    def fn(t):
        v = math.exp(-alpha * t)
        for lam, a in zip(lams, amps):
            v *= float(np.exp(-lam * t) @ a)
        return v

    return _t_integral(fn, alpha)


def _resolvent_energy(coords, cf, alpha: float) -> float:
    lams = [c.eig[0] for c in coords]
    sq = [a * a for a in cf]

    def fn(t):
        e = np.array([np.exp(-lam * t) for lam in lams], dtype=object)
        p = [float(ek @ s) for ek, s in zip(e, sq)]
        q = [float(ek @ (s * lam)) for ek, s, lam in zip(e, sq, lams)]
        total = 0.0
        for k in range(len(p)):
            prod = q[k]
            for j in range(len(p)):
                if j != k:
                    prod *= p[j]
            total += prod
        return t * math.exp(-alpha * t) * total

    return _t_integral(fn, alpha)


DEFAULT_EXPERIMENT: dict = {
    "D": 4,
    "sigma2": "bridge",
    "lambda": "uniform",
    "f": {"kind": "step", "at": 0.0, "height": 1.0},
    "N_max": 4,
    "alpha": 1.0,
    "grid": {"points_per_sigma": [4, 8, 16, 32], "reference_factor": 4},
    "test_functions": [
        {"name": "bump", "profile": "bump", "scale": 1.0, "relative": True},
        {"name": "cos", "profile": "cos", "scale": 0.7, "relative": True},
        {"name": "sin", "profile": "sin", "scale": 1.0, "relative": True},
        {"name": "polybump", "profile": "polybump", "scale": 0.8, "relative": True},
        {"name": "tanh", "profile": "tanh", "scale": 1.5, "relative": True},
        {"name": "smooth_cos", "profile": "cos", "scale": 2.0},
        {"name": "smooth_bump", "profile": "bump", "scale": 3.0},
        {"name": "smooth_tanh", "profile": "tanh", "scale": 2.0},
    ],
    "pairing_source": "bump",
    "pairing_tests": ["bump", "cos", "sin", "polybump", "tanh"],
    "energy_tests": ["smooth_cos", "smooth_bump", "smooth_tanh"],
    "m1_source": "bump",
    "mc": {"samples": 200000, "oracle_samples": 1000000},
    "m_schedule": [2, 4, 8, 16, 32, 64],
    "envelope_m": [2, 4, 8, 16, 32, 64],
    "tolerances": {"pairing": 5e-3, "energy": 5e-3, "liminf": 1e-3, "stderr": 3.0, "desint": 5e-3},
    "seed": 20240611,
}


def _sigmas(cfg: Mapping) -> np.ndarray:
    D = int(cfg["D"])
    s2 = cfg.get("sigma2", "bridge")
    if s2 == "bridge":
        var = 1.0 / (np.pi * np.arange(1, D + 1)) ** 2
    else:
        var = np.asarray(s2, dtype=float)
        if len(var) != D:
            raise ValueError("sigma2 must list D variances")
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    return np.sqrt(var)


def _lambdas(cfg: Mapping) -> np.ndarray:
    D = int(cfg["D"])
    lam = cfg.get("lambda", "uniform")
    if lam == "uniform":
        return np.full(D, 1.0 / D)
    lam = np.asarray(lam, dtype=float)
    if len(lam) != D or np.any(lam < 0):
        raise ValueError("lambda must list D nonnegative weights")
    return lam


def _schedule(cfg: Mapping, N_max: int) -> list[int]:
    pps = list(cfg["grid"]["points_per_sigma"])
    if len(pps) < N_max:
        pps = pps + [pps[-1]] * (N_max - len(pps))
    return [int(v) for v in pps[:N_max]]


def gaussian_bv_experiment(cfg: Mapping | None = None, progress: Callable[[str], None] | None = None) -> ConvergenceReport:
    """Gaussian reference measure with a BV potential on ``D`` coordinates.

    ``mu_N`` perturbs the first ``N`` coordinates by ``exp(-lam_k f(x_k))``
    and leaves the others Gaussian; ``mu_inf = mu_D``.  Reports Z_N against a
    Monte Carlo oracle, resolvent pairings, energy recovery, the liminf
    slack, the disintegration integrals, the delta/C sweep and the envelope
    sandwich.
    """
    cfg = {**DEFAULT_EXPERIMENT, **(cfg or {})}
    say = progress or (lambda msg: None)
    t0 = time.perf_counter()
    D = int(cfg["D"])
    N_max = int(cfg["N_max"])
    if not 1 <= N_max <= D:
        raise ValueError(f"N_max={N_max} must lie in 1..D={D}")
    sigma, lam = _sigmas(cfg), _lambdas(cfg)
    f = BVFunction.from_dict(cfg["f"])
    alpha = float(cfg["alpha"])
    tol = {**DEFAULT_EXPERIMENT["tolerances"], **cfg.get("tolerances", {})}
    seed = int(cfg["seed"])
    pps = _schedule(cfg, N_max)
    ref_pps = int(cfg["grid"].get("reference_factor", 4)) * max(pps)
    tfs = {d["name"]: TestFunction.from_dict(d) for d in cfg["test_functions"]}
    for key in ("pairing_source", "m1_source"):
        if cfg[key] not in tfs:
            raise ValueError(f"{key} names unknown test function {cfg[key]!r}")
    for key in ("pairing_tests", "energy_tests"):
        for n in cfg[key]:
            if n not in tfs:
                raise ValueError(f"{key} names unknown test function {n!r}")

    cache: dict = {}

    def coord(k: int, perturbed: bool, p: int) -> _Coordinate:
        key = (k, bool(perturbed and lam[k] > 0), p)
        if key not in cache:
            cache[key] = _Coordinate(float(sigma[k]), float(lam[k]), f, key[1], p)
        return cache[key]

    def coords_for(N: int, p: int):
        return [coord(k, k < N, p) for k in range(D)]

    say("building reference discretisation")
    ref = coords_for(D, ref_pps)
    src = tfs[cfg["pairing_source"]]
    m1src = tfs[cfg["m1_source"]]

    def cvec(cs, tf):
        return [c.coeffs(tf.factor(k, sigma)[0]) for k, c in enumerate(cs)]

    ref_src = cvec(ref, src)
    ref_pair = {n: _resolvent_pairing(ref, ref_src, cvec(ref, tfs[n]), alpha) for n in cfg["pairing_tests"]}
    ref_m1 = _resolvent_energy(ref, cvec(ref, m1src), alpha)

    # continuum energies of the smooth tests under mu_inf
    def cont_energy(tf: TestFunction, cs) -> float:
        e2, n2 = [], []
        for k, c in enumerate(cs):
            p, dp = tf.factor(k, sigma)
            e2.append(c.expect(lambda x: dp(x) ** 2))
            n2.append(c.expect(lambda x: p(x) ** 2))
        return sum(e2[k] * math.prod(n2[j] for j in range(D) if j != k) for k in range(D))

    e_inf = {n: cont_energy(tfs[n], ref) for n in cfg["energy_tests"]}

    rows = []
    mc = cfg["mc"]
    for N in range(1, N_max + 1):
        say(f"N={N}")
        cs = coords_for(N, pps[N - 1])
        row: dict = {"N": N, "points_per_sigma": pps[N - 1]}
        # (a) partition function
        z, se = partition_function(f, lam, sigma, N, int(mc["samples"]), seed, task="mosco/Z")
        zo, seo = partition_function(f, lam, sigma, N, int(mc["oracle_samples"]), seed, task="mosco/Z-oracle")
        row.update({"Z": z, "Z_stderr": se, "Z_oracle": zo, "Z_oracle_stderr": seo,
                    "Z_exact": exact_partition_function(f, lam, sigma, N)})
        row["Z_ok"] = abs(z - zo) <= tol["stderr"] * math.hypot(se, seo)
        # (b) resolvent pairings
        c_src = cvec(cs, src)
        gaps = []
        for n in cfg["pairing_tests"]:
            pv = _resolvent_pairing(cs, c_src, cvec(cs, tfs[n]), alpha)
            row[f"pair[{n}]"] = pv
            gaps.append(abs(pv - ref_pair[n]))
        row["pair_gap"] = max(gaps)
        # (c) energy recovery of nodal interpolants
        egaps = []
        for n in cfg["energy_tests"]:
            tf = tfs[n]
            e_k = [c.F.S @ c.nodal(tf.factor(k, sigma)[0]) @ c.nodal(tf.factor(k, sigma)[0]) for k, c in enumerate(cs)]
            n_k = [c.F.M @ c.nodal(tf.factor(k, sigma)[0]) @ c.nodal(tf.factor(k, sigma)[0]) for k, c in enumerate(cs)]
            eN = sum(e_k[k] * math.prod(n_k[j] for j in range(D) if j != k) for k in range(D))
            row[f"energy[{n}]"] = float(eN)
            egaps.append(abs(eN - e_inf[n]))
        row["energy_gap"] = float(max(egaps))
        # (d) liminf ingredients
        row["m1_energy"] = _resolvent_energy(cs, cvec(cs, m1src), alpha)
        # embedding norms of the pairing tests
        row["embed_norm_gap"] = max(
            abs(math.prod(float(c.F.M @ c.nodal(tfs[n].factor(k, sigma)[0]) @ c.nodal(tfs[n].factor(k, sigma)[0]))
                          for k, c in enumerate(cs))
                - math.prod(c.expect(lambda x, g=tfs[n].factor(k, sigma)[0]: g(x) ** 2) for k, c in enumerate(ref)))
            for n in cfg["pairing_tests"]
        )
        # sub-Markov along the sequence, per coordinate factor
        row["markov_ok"] = all(markov_check(c.F, alpha, trials=50, seed=seed + k).ok for k, c in enumerate(cs))
        rows.append(row)

    energies = [r["m1_energy"] for r in rows]
    for i, r in enumerate(rows):
        r["m1_slack"] = min(energies[i:]) - ref_m1

    say("disintegration integrals")
    desint = _desint_table(tfs, cfg["pairing_tests"], sigma, lam, f, D, N_max, coord, pps)
    say("delta/C sweep")
    sweep = condition_mucken_sweep(sigma, lam, f, N_max, cfg["m_schedule"])
    say("envelopes and weighted weak convergence")
    sandwich = _envelope_sandwich(f, lam, sigma, cfg["envelope_m"], N_max, seed, int(mc["samples"]))
    weak = _weighted_weak(tfs, cfg["pairing_tests"], f, lam, sigma, N_max, seed, int(mc["samples"]), tol["stderr"])

    tail = _tail(rows)
    flags = {
        "Z_within_stderr": all(r["Z_ok"] for r in rows),
        "pairing_tail_gap": rows[-1]["pair_gap"] <= tol["pairing"],
        "pairing_trend": _nonincreasing([r["pair_gap"] for r in tail], slack=tol["pairing"] / 10),
        "energy_tail_gap": rows[-1]["energy_gap"] <= tol["energy"],
        "liminf_slack": all(r["m1_slack"] >= -tol["liminf"] for r in rows if r["N"] >= 2),
        "desint_tail_gap": desint["tail_gap"] <= tol["desint"],
        "delta_decreasing": sweep["delta_decreasing"],
        "C_bounded": sweep["C_bounded"],
        "mopert_dominates": sweep["mopert_ok"],
        "sandwich_hypothesis": sandwich["hypothesis"],
        "sandwich_convergence": sandwich["converging"],
        "weighted_weak": weak["ok"],
        "markov_all": all(r["markov_ok"] for r in rows),
        "embedding_norms": rows[-1]["embed_norm_gap"] <= tol["pairing"],
        "sufficient_tail": N_max >= 2,
    }
    flags = {k: bool(v) for k, v in flags.items()}
    tables = {"desint": desint["rows"], "sweep": sweep["rows"], "sweep_sup": sweep["sup_rows"],
              "sandwich": sandwich["rows"], "weighted_weak": weak["rows"]}
    meta = {
        "D": D, "N_max": N_max, "alpha": alpha, "sigma": sigma.tolist(), "lambda": lam.tolist(),
        "reference_points_per_sigma": ref_pps, "reference_pairings": ref_pair, "reference_m1_energy": ref_m1,
        "limit_energies": e_inf, "tolerances": tol,
    }
    meta["runtime_s"] = time.perf_counter() - t0
    return ConvergenceReport(rows, flags, tables, meta)


def _desint_table(tfs, names, sigma, lam, f, D, N_max, coord, pps) -> dict:
    """``int_S |int g dm_s^N|^2 dnu_N`` for product ``g``, splitting off each coordinate in turn."""
    rows = []
    worst_tail = 0.0
    for n in names:
        tf = tfs[n]
        for k in range(D):
            vals = []
            for N in list(range(1, N_max + 1)) + [D]:
                cs = [coord(j, j < N, pps[min(N, N_max) - 1]) for j in range(D)]
                g = [tf.factor(j, sigma)[0] for j in range(D)]
                inner = cs[k].expect(g[k]) ** 2
                outer = math.prod(cs[j].expect(lambda x, h=g[j]: h(x) ** 2) for j in range(D) if j != k)
                vals.append(inner * outer)
            lim = vals[-1]
            for N, v in zip(range(1, N_max + 1), vals[:-1]):
                rows.append({"test": n, "split": k + 1, "N": N, "value": v, "limit": lim, "gap": abs(v - lim)})
            worst_tail = max(worst_tail, abs(vals[N_max - 1] - lim))
    return {"rows": rows, "tail_gap": worst_tail}


def _perturbation_class(f: BVFunction, lam: float):
    """``(c1, c2, mode, C_lip)`` for ``g = exp(-lam f)`` or ``None`` when no bound applies."""
    if lam <= 0 or not len(f.breaks):
        return None
    inf, sup = f.window_extrema([f.breaks[0] - 1.0], [f.breaks[-1] + 1.0])
    c1, c2 = math.exp(-lam * float(sup[0])), math.exp(-lam * float(inf[0]))
    if not c1 < c2:
        return None
    _, f1, f2 = jordan_decompose(f)
    if len(f.jump_points) == 0:
        c_lip = lam * float(np.max(np.abs(f.slopes))) * c2
        return c1, c2, "lipschitz", c_lip
    if f2.total_variation == 0.0:
        return c1, c2, "decreasing", None
    if f1.total_variation == 0.0:
        return c1, c2, "increasing", None
    return None


def condition_mucken_sweep(sigma, lam, f: BVFunction, N_max: int, m_schedule: Sequence[int],
                           kappa: Callable | None = None) -> dict:
    """Delta and C of the 1-d conditionals per (coordinate, m, N) with sup-over-N rows.

    Conditionals are product factors, so the ``L^2(nu_N)`` and ``L^inf(nu_N)``
    norms over the mixing coordinates equal the factor values.
    """
    sigma = np.asarray(sigma, dtype=float)
    lam = np.asarray(lam, dtype=float)
    D = len(sigma)
    rows, sup_rows = [], []
    ok_dec, ok_C, ok_mop = True, True, True
    for k in range(D):
        base = GaussianDensity([0.0], [sigma[k] ** 2])
        pert = BVPerturbedDensity(base, f, [lam[k]]) if lam[k] > 0 else base
        cls = _perturbation_class(f, float(lam[k]))
        w = gaussian_factor(f, float(lam[k]), float(sigma[k]))
        cache: dict = {}

        def est(which, r):
            key = (which, r)
            if key not in cache:
                rho = pert if which == "pert" else base
                cache[key] = (delta_estimate(rho, kappa, r).value, C_estimate(rho, kappa, r).value)
            return cache[key]

        sup_d, sup_c = [], []
        for m in m_schedule:
            r = 1.0 / m
            vals = []
            for N in range(1, N_max + 1):
                which = "pert" if k < N else "base"
                dv, cv = est(which, r)
                row = {"coord": k + 1, "m": m, "N": N, "perturbed": which == "pert", "delta": dv, "C": cv}
                if which == "pert" and cls is not None:
                    c1, c2, mode, c_lip = cls
                    db = est("base", r)[0]
                    d2 = est("base", 2 * r)[0] if mode != "lipschitz" else None
                    bound = mopert_bound(c1, c2, mode, db, r, 1, C_lip=c_lip, delta_2r=d2)
                    row["weighted_delta"] = math.sqrt(w) * dv
                    row["mopert_bound"] = bound
                    ok_mop &= row["weighted_delta"] <= bound
                rows.append(row)
                vals.append((dv, cv))
            sup_d.append(max(v[0] for v in vals))
            sup_c.append(max(v[1] for v in vals))
            sup_rows.append({"coord": k + 1, "m": m, "sup_delta": sup_d[-1], "sup_C": sup_c[-1]})
        ok_dec &= all(b < a for a, b in zip(sup_d, sup_d[1:]))
        ok_C &= all(math.isfinite(c) and c <= 2 * sup_c[0] for c in sup_c)
    return {"rows": rows, "sup_rows": sup_rows, "delta_decreasing": ok_dec, "C_bounded": ok_C, "mopert_ok": ok_mop}


def _coord_expect(fn: Callable, sigma: float, breaks: np.ndarray) -> float:
    X, W = _gauss_segments(-12 * sigma, 12 * sigma, breaks, pieces=64)
    return float(np.asarray(fn(X), dtype=float) @ (W * np.exp(-0.5 * (X / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))))


def _envelope_sandwich(f: BVFunction, lam, sigma, ms: Sequence[int], N_max: int, seed: int, samples: int) -> dict:
    """Envelopes ``exp(-Q_{f_maj}) <= exp(-Q_f) <= exp(-Q_{f_min})`` and their ``L^2`` convergence.

    The inequalities are checked on Gaussian samples; ``L^2(mu~)`` distances
    are exact products of 1-d integrals.
    """
    lam = np.asarray(lam, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    D = len(lam)
    rng = task_rng(seed, "mosco/sandwich")
    X = rng.standard_normal((min(samples, 100_000), D)) * sigma
    rows = []
    hyp = True
    dists = []
    for m in ms:
        fmin, fmaj = bv_envelopes(f, int(m))
        for N in range(1, N_max + 1):
            P = X.copy()
            P[:, N:] = 0.0
            g = np.exp(-(f(P) @ lam))
            lo = np.exp(-(fmaj(P) @ lam))
            hi = np.exp(-(fmin(P) @ lam))
            hyp &= bool(np.all(lo <= g + 1e-15) and np.all(g <= hi + 1e-15))
        brk = np.union1d(fmin.breaks, f.breaks)
        dist = 0.0
        for env in (fmin, fmaj):
            aa = ab = bb = 1.0
            for k in range(D):
                a = lambda x, k=k: np.exp(-lam[k] * env(x))
                b = lambda x, k=k: np.exp(-lam[k] * f(x))
                aa *= _coord_expect(lambda x: a(x) ** 2, sigma[k], brk)
                ab *= _coord_expect(lambda x: a(x) * b(x), sigma[k], brk)
                bb *= _coord_expect(lambda x: b(x) ** 2, sigma[k], brk)
            dist = max(dist, math.sqrt(max(aa - 2 * ab + bb, 0.0)))
        dists.append(dist)
        rows.append({"m": m, "L2_distance": dist})
    converging = _nonincreasing(dists) and (dists[-1] < dists[0] or dists[-1] == 0.0)
    return {"rows": rows, "hypothesis": hyp, "converging": converging}


def _weighted_weak(tfs, names, f: BVFunction, lam, sigma, N_max: int, seed: int, samples: int, nse: float) -> dict:
    """Monte Carlo ``int g(P_N x) exp(-Q_f(P_N x)) dmu~`` against exact product values."""
    lam = np.asarray(lam, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    D = len(lam)
    rows, ok = [], True
    for n in names:
        tf = tfs[n]
        lim = math.prod(_coord_expect(lambda x, k=k: tf.factor(k, sigma)[0](x) * np.exp(-lam[k] * f(x)), sigma[k], f.breaks)
                        for k in range(D))
        for N in range(1, N_max + 1):
            rng = task_rng(seed, f"mosco/weak/{n}/N={N}")
            X = rng.standard_normal((samples, D)) * sigma
            X[:, N:] = 0.0
            v = tf(X, sigma) * np.exp(-(f(X) @ lam))
            est, se = float(v.mean()), float(v.std(ddof=1) / math.sqrt(samples))
            exact = math.prod(
                _coord_expect(lambda x, k=k: tf.factor(k, sigma)[0](x) * np.exp(-lam[k] * f(x)), sigma[k], f.breaks)
                if k < N else float(tf.factor(k, sigma)[0](0.0) * math.exp(-lam[k] * float(f(0.0))))
                for k in range(D))
            good = abs(est - exact) <= nse * se
            ok &= good
            rows.append({"test": n, "N": N, "mc": est, "stderr": se, "exact": exact, "limit": lim,
                         "gap_to_limit": abs(exact - lim), "ok": good})
    return {"rows": rows, "ok": ok}
