"""Acceptance criteria 1-12, each at its stated tolerance.

Every test reports through the ``record`` fixture; the terminal summary then
prints one PASS/FAIL line per criterion.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from kuhnfem.bv import BVFunction, bv_envelopes, exact_partition_function, jordan_decompose
from kuhnfem.config import load_config
from kuhnfem.densities import BVPerturbedDensity, GaussianDensity, UniformDensity, grid_for
from kuhnfem.forms import ResolventSolver, assemble, generalized_eigs, l2_inner, markov_check, resolvent
from kuhnfem.functionals import functional_integrals
from kuhnfem.mosco import condition_mucken_sweep, gaussian_bv_experiment
from kuhnfem.quadrature import kuhn_cell_rule
from kuhnfem.seeding import task_rng
from kuhnfem.suites import approximation_bounds, cell_volume_mc, fd_gradient, partition_of_unity, weak_gradient_identity
from kuhnfem.tents import catalog_pairs, eval_tent
from kuhnfem.triangulation import GridSpec

SEED = 20240611
CONFIGS = Path(__file__).parent.parent / "configs"
SWEEP_M = [2, 4, 8, 16, 32, 64]


def rng_for(name):
    return task_rng(SEED, f"acceptance/{name}")


def empirical_order(ms, values):
    """Least-squares slope of log(value) against log(1/m)."""
    return float(np.polyfit(np.log(1.0 / np.asarray(ms, dtype=float)), np.log(values), 1)[0])


# 1 ---------------------------------------------------------------------------

def test_c01_partition_of_unity(record):
    t0 = time.perf_counter()
    worst, worst_hat = 0.0, 0.0
    for d in (1, 2, 3):
        for r in (1.0, 0.25):
            pu, hat = partition_of_unity(GridSpec.symmetric(d, r, 2.0), 100_000, rng_for(f"pu/{d}/{r}"))
            worst, worst_hat = max(worst, pu.value), max(worst_hat, hat.value)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 30.0
    record("1", ok, f"max |sum - 1| = {worst:.2e} (tol 1e-12), closed-form gap {worst_hat:.2e}, {elapsed:.1f} s (< 30 s)")
    assert ok


# 2 ---------------------------------------------------------------------------

def _tent_integral(d, r, alpha):
    """Kuhn-cell quadrature of the package tent over the 2^d cubes around ``alpha``."""
    P, W = kuhn_cell_rule(d, 3)
    Wf = np.tile(W, P.shape[0])
    corners = np.stack(np.meshgrid(*([np.array([-1, 0])] * d), indexing="ij"), axis=-1).reshape(-1, d)
    total = 0.0
    for c in corners:
        pts = r * ((np.asarray(alpha) + c)[None, None, :] + P).reshape(-1, d)
        total += float(eval_tent(alpha, r, pts) @ Wf) * r ** d
    return total


def test_c02_tent_mass(record):
    rng = rng_for("tent-mass")
    worst = 0.0
    for d in (1, 2, 3):
        for r in (1.0, 0.25, 0.1):
            alpha = tuple(int(v) for v in rng.integers(-5, 6, d))
            worst = max(worst, abs(_tent_integral(d, r, alpha) - r ** d) / r ** d)
    ok = worst <= 1e-8
    record("2", ok, f"max relative tent-mass error {worst:.2e} (tol 1e-8), d <= 3")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_c03_weak_gradient(record):
    worst_id, worst_fd = 0.0, 0.0
    for d in (1, 2, 3):
        grid = GridSpec.symmetric(d, 0.25, 1.0)
        worst_id = max(worst_id, weak_gradient_identity(grid, 100, rng_for(f"wg/{d}")))
        worst_fd = max(worst_fd, fd_gradient(grid, 2000, rng_for(f"fd/{d}")))
    ok = worst_id <= 1e-14 and worst_fd <= 1e-5
    record("3", ok, f"per-cell identity gap {worst_id:.2e} (tol 1e-14, relative), "
                    f"finite-difference gap {worst_fd:.2e} (tol 1e-5)")
    assert ok


# 4 ---------------------------------------------------------------------------

def test_c04_cell_volume(record):
    rng = rng_for("volume")
    parts = []
    ok = True
    for d in (2, 3, 4):
        perm = tuple(int(v) for v in rng.permutation(d))
        vol, sig = cell_volume_mc(d, 0.5, 1_000_000, rng, perm)
        ok &= sig <= 3.0
        parts.append(f"d={d}: {vol / (0.5 ** d / math.factorial(d)):.4f} x r^d/d!, {sig:.2f} sigma")
    record("4", ok, "; ".join(parts) + " (tol 3 sigma, 1e6 samples)")
    assert ok


# 5 ---------------------------------------------------------------------------

def _compact_g(X):
    # prod (3/4)(1 - x_k^2)_+ has unit integral and support [-1, 1]^d
    return np.prod(np.clip(0.75 * (1.0 - np.atleast_2d(X) ** 2), 0.0, None), axis=1)


def _gauss_g(d):
    dist = stats.multivariate_normal(np.zeros(d), np.eye(d))
    return lambda X: np.atleast_1d(dist.pdf(np.atleast_2d(X)))


@pytest.mark.parametrize("d", [1, 2])
def test_c05_mass_laws(record, d):
    worst_I, worst_R = 0.0, -math.inf
    for r in (0.5, 0.25, 0.125):
        for g, half, total in ((_compact_g, 1.0, 1.0), (_gauss_g(d), 7.0 if d == 1 else 6.0, None)):
            box = GridSpec.symmetric(d, r, half)
            if total is None:
                # Gaussian mass inside the widened quadrature box (3 extra cells per side)
                w = box.upper[0] + 3 * r
                total = (stats.norm.cdf(w) - stats.norm.cdf(-w)) ** d
            for key, (I, R) in functional_integrals(g, catalog_pairs(d), r, box).items():
                worst_I = max(worst_I, abs(I - total))
                worst_R = max(worst_R, R - 2 * total)
    ok = worst_I <= 1e-8 and worst_R <= 1e-8
    record("5", ok, f"d={d}: max |int I - int g| = {worst_I:.2e}, max (int R - 2 int g) = {worst_R:.3f} "
                    f"over {len(catalog_pairs(d))} pairs and r in {{1/2, 1/4, 1/8}}")
    assert ok


# 6 ---------------------------------------------------------------------------

def test_c06_approximation_bounds(record):
    t0 = time.perf_counter()
    rows = approximation_bounds(1, 0.25) + approximation_bounds(1, 0.125) + approximation_bounds(2, 0.25)
    elapsed = time.perf_counter() - t0
    bad = [(r["triple"], r["d"], r["r"], k) for r in rows for k in ("ii", "iii", "iv") if r[f"lhs_{k}"] > r[f"rhs_{k}"]]
    ratio = max(r[f"lhs_{k}"] / r[f"rhs_{k}"] for r in rows for k in ("ii", "iii", "iv"))
    ok = not bad and elapsed < 120.0
    record("6", ok, f"{len(rows)} triple/scale cases, worst lhs/rhs = {ratio:.3f}, violations {bad}, "
                    f"{elapsed:.1f} s (< 120 s)")
    assert ok


# 7 ---------------------------------------------------------------------------

MEASURES_7 = [
    ("gaussian d=1", GaussianDensity([0.0], [1.0]), 1 / 16),
    ("step-perturbed gaussian d=1", BVPerturbedDensity(GaussianDensity([0.0], [1.0]), BVFunction.step(), [1.0]), 1 / 16),
    ("gaussian d=2", GaussianDensity([0.0, 0.0], [1.0, 1.0]), 1 / 4),
    ("step-perturbed gaussian d=2",
     BVPerturbedDensity(GaussianDensity([0.0, 0.0], [1.0, 0.5]), BVFunction.step(), [1.0, 0.5]), 1 / 4),
    ("uniform d=3", UniformDensity([-1.0] * 3, [1.0] * 3), 1 / 2),
]


@pytest.mark.parametrize("name,rho,r", MEASURES_7, ids=[m[0] for m in MEASURES_7])
def test_c07_m_matrix_and_sub_markov(record, name, rho, r):
    F = assemble(grid_for(rho, r), rho)
    S = F.S.tocoo()
    off = float(S.data[S.row != S.col].max())
    rep = markov_check(F, 1.0, trials=1000, seed=int(rng_for(f"markov/{name}").integers(2**31)))
    ok = off <= 1e-14 and rep.ok and rep.min_value >= -1e-9 and rep.max_value <= 1 + 1e-9
    record("7", ok, f"{name}: max off-diagonal {off:.2e}, alpha G_alpha range "
                    f"[{rep.min_value:.3f}, {rep.max_value:.3f}] over 1000 trials")
    assert ok


# 8 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ou_form():
    return assemble(GridSpec.from_bounds(1 / 32, [-6.0], [6.0]), GaussianDensity([0.0], [1.0]))


def test_c08_ornstein_uhlenbeck(record, ou_form):
    F = ou_form
    lam, _ = generalized_eigs(F, 4)
    # relative 2% for the nonzero levels; the zero level gets the same 0.02 as an absolute bound
    eig_err = [abs(lam[0])] + [abs(lam[k] - k) / k for k in (1, 2, 3)]
    x = F.interpolate(lambda X: X[:, 0])
    res_err = []
    for a in (0.5, 1.0, 2.0):
        u = resolvent(F, a, x)
        target = x / (a + 1.0)
        res_err.append(math.sqrt(l2_inner(F, u - target) / l2_inner(F, target)))
    ok = max(eig_err) <= 0.02 and max(res_err) <= 0.02
    record("8", ok, f"eigenvalues {np.round(lam, 5).tolist()} (max rel err {max(eig_err):.2e}), "
                    f"resolvent of x rel err {max(res_err):.2e} (tol 2%)")
    assert ok


# 9 ---------------------------------------------------------------------------

def test_c09_resolvent_identity(record, ou_form):
    rng = rng_for("resolvent-identity")
    F2 = assemble(grid_for(GaussianDensity([0.0, 0.0], [1.0, 0.5]), 0.25), GaussianDensity([0.0, 0.0], [1.0, 0.5]))
    worst = 0.0
    for F in (ou_form, F2):
        for a, b in ((0.5, 1.0), (1.0, 2.0), (0.3, 5.0)):
            Ga, Gb = ResolventSolver(F, a), ResolventSolver(F, b)
            for _ in range(5):
                v = rng.standard_normal(F.n)
                ga, gb = Ga.solve(F.M @ v), Gb.solve(F.M @ v)
                lhs, rhs = ga - gb, (b - a) * Ga.solve(F.M @ gb)
                worst = max(worst, math.sqrt(l2_inner(F, lhs - rhs) / l2_inner(F, lhs)))
    ok = worst <= 1e-8
    record("9", ok, f"max relative gap {worst:.2e} (tol 1e-8) over 30 random inputs")
    assert ok


# 10 --------------------------------------------------------------------------

def test_c10_bv_envelopes(record):
    # jumps at -1 and 0.5, a linear stretch on [1, 2], a point value off both limits at -1
    f = BVFunction([-1.0, 0.5, 1.0, 2.0], [0.0, 0.0, 0.0, -1.5, 0.0], [0.2, 1.0, -0.5, 1.0, -2.0],
                   [2.0, -0.5, -0.5, -2.0])
    rng = rng_for("envelopes")
    X = np.sort(np.concatenate([rng.uniform(-3, 3, 10_000), f.breaks]))
    fx = f(X)
    far = np.min(np.abs(X[:, None] - f.jump_points[None, :]), axis=1) >= 0.25
    viol, gaps = 0, []
    for k in range(1, 7):
        lo, hi = bv_envelopes(f, 2 ** k)
        viol += int(np.count_nonzero((lo(X) > fx + 1e-12) | (fx > hi(X) + 1e-12)))
        gaps.append(float(np.max(hi(X[far]) - lo(X[far]))))
    a, f1, f2 = jordan_decompose(f)
    edges = np.concatenate([[-4.0], f.breaks, [4.0]])
    mids = np.concatenate([np.linspace(p, q, 9)[1:-1] for p, q in zip(edges[:-1], edges[1:])])
    jordan = float(np.max(np.abs(a + f1(mids) - f2(mids) - f(mids))))
    shrink = all(q <= p for p, q in zip(gaps, gaps[1:])) and gaps[-1] <= 0.1 * gaps[0]
    ok = viol == 0 and shrink and jordan <= 1e-12
    record("10", ok, f"sandwich violations {viol} at 1e4 points, continuity-point gaps "
                     f"{[round(g, 4) for g in gaps]}, Jordan error {jordan:.1e}")
    assert ok


# 11 --------------------------------------------------------------------------

def _sweep(f, lam):
    res = condition_mucken_sweep([1.0], [lam], f, 1, SWEEP_M)
    rows = [r for r in res["rows"] if r["N"] == 1]
    return rows, res


def _sweep_verdict(rows):
    d = [r["delta"] for r in rows]
    c = [r["C"] for r in rows]
    order = empirical_order(SWEEP_M, d)
    decreasing = all(b < a for a, b in zip(d, d[1:]))
    bounded = all(math.isfinite(v) and v <= 2 * c[0] for v in c)
    mop = all(r["weighted_delta"] <= r["mopert_bound"] for r in rows if "mopert_bound" in r)
    return order, decreasing, bounded, mop


def test_c11_gaussian_and_lipschitz_perturbation(record):
    parts, ok = [], True
    rows, _ = _sweep(BVFunction.constant(0.0), 0.0)
    order, dec, bnd, _ = _sweep_verdict(rows)
    ok &= dec and bnd and 0.8 <= order <= 1.2
    parts.append(f"gaussian order {order:.3f}, decreasing {dec}, C bounded {bnd}")
    rows, _ = _sweep(BVFunction.from_dict({"kind": "clip", "width": 1.0, "height": 1.0}), 1.0)
    order, dec, bnd, mop = _sweep_verdict(rows)
    ok &= dec and bnd and mop and 0.8 <= order <= 1.2
    parts.append(f"Lipschitz-perturbed order {order:.3f}, decreasing {dec}, C bounded {bnd}, mopert {mop}")
    record("11", ok, "; ".join(parts))
    assert ok


@pytest.mark.xfail(strict=True, reason="a jump in the potential caps the residual decay at about half order")
def test_c11_jump_perturbation(record):
    rows, _ = _sweep(BVFunction.step(), 1.0)
    order, dec, bnd, mop = _sweep_verdict(rows)
    ok = dec and bnd and mop and 0.8 <= order <= 1.2
    record("11", ok, f"step-perturbed order {order:.3f} (band [0.8, 1.2]), decreasing {dec}, "
                     f"C bounded {bnd}, mopert {mop}")
    assert ok


# 12 --------------------------------------------------------------------------

def test_c12_mosco_shipped_config(record):
    cfg = load_config(CONFIGS / "mosco_d4.json")
    mos = cfg.section("mosco")
    mos["seed"] = cfg.seed
    t0 = time.perf_counter()
    rep = gaussian_bv_experiment(mos)
    elapsed = time.perf_counter() - t0
    rows = rep.rows
    D, sigma, lam = rep.meta["D"], rep.meta["sigma"], rep.meta["lambda"]
    assert D == 4 and len(mos["pairing_tests"]) == 5 and len(mos["energy_tests"]) == 3
    assert np.allclose(np.square(sigma), 1.0 / (np.pi * np.arange(1, 5)) ** 2) and np.allclose(lam, 0.25)
    z_ok = all(abs(r["Z"] - r["Z_oracle"]) <= 3 * math.hypot(r["Z_stderr"], r["Z_oracle_stderr"]) for r in rows)
    z_exact = max(abs(r["Z_oracle"] - exact_partition_function(BVFunction.step(), lam, sigma, r["N"])) / r["Z_oracle_stderr"]
                  for r in rows)
    pair = rows[-1]["pair_gap"]
    energy = rows[-1]["energy_gap"]
    slack = min(r["m1_slack"] for r in rows if r["N"] >= 2)
    checks = {"a": z_ok, "b": pair <= 5e-3, "c": energy <= 5e-3, "d": slack >= -1e-3, "runtime": elapsed < 600}
    ok = all(checks.values())
    record("12", ok, f"(a) Z within 3 stderr {z_ok} (oracle vs exact {z_exact:.2f} stderr); "
                     f"(b) pairing tail gap {pair:.2e}; (c) energy gap {energy:.2e}; "
                     f"(d) min liminf slack {slack:.2e}; {elapsed:.1f} s (< 600 s)")
    assert ok, checks
