import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from kuhnfem.bv import BVFunction
from kuhnfem.densities import GaussianDensity
from kuhnfem.forms import assemble
from kuhnfem.mosco import (
    DEFAULT_EXPERIMENT,
    SectionEntry,
    SectionSeries,
    TestFunction,
    _Coordinate,
    _resolvent_energy,
    _resolvent_pairing,
    gaussian_bv_experiment,
    m1_liminf_diagnostic,
    m2_recovery_diagnostic,
    sandwich_check,
    strong_convergence_check,
)
from kuhnfem.triangulation import GridSpec

SMALL = {
    "D": 2, "N_max": 2,
    "grid": {"points_per_sigma": [6, 12], "reference_factor": 2},
    "mc": {"samples": 20000, "oracle_samples": 40000},
    "m_schedule": [2, 4], "envelope_m": [2, 4, 8],
    "tolerances": {"pairing": 5e-2, "energy": 5e-2, "liminf": 1e-2, "stderr": 3.0, "desint": 5e-2},
    "seed": 5,
}


@pytest.fixture(scope="module")
def small_report():
    return gaussian_bv_experiment(SMALL)


def test_product_pairing_matches_kronecker_solve():
    # two coordinates; the t-integral over 1-d eigenbases against a direct sparse solve
    f = BVFunction.step()
    cs = [_Coordinate(0.5, 0.5, f, True, 6), _Coordinate(0.3, 0.5, f, False, 6)]
    sigma = np.array([0.5, 0.3])
    src = TestFunction("a", "bump", 1.0, relative=True)
    tst = TestFunction("b", "tanh", 1.5, relative=True)
    alpha = 1.0
    cf = [c.coeffs(src.factor(k, sigma)[0]) for k, c in enumerate(cs)]
    cp = [c.coeffs(tst.factor(k, sigma)[0]) for k, c in enumerate(cs)]
    val = _resolvent_pairing(cs, cf, cp, alpha)
    M = sp.kron(cs[0].F.M, cs[1].F.M)
    S = sp.kron(cs[0].F.S, cs[1].F.M) + sp.kron(cs[0].F.M, cs[1].F.S)
    fv = np.kron(cs[0].nodal(src.factor(0, sigma)[0]), cs[1].nodal(src.factor(1, sigma)[0]))
    pv = np.kron(cs[0].nodal(tst.factor(0, sigma)[0]), cs[1].nodal(tst.factor(1, sigma)[0]))
    u = spla.spsolve((alpha * M + S).tocsc(), M @ fv)
    assert val == pytest.approx(float(u @ (M @ pv)), rel=1e-9)
    en = _resolvent_energy(cs, cf, alpha)
    assert en == pytest.approx(float(u @ (S @ u)), rel=1e-8)


def test_small_experiment_passes(small_report):
    rep = small_report
    assert rep.passed, rep.failed_flags()
    assert [r["N"] for r in rep.rows] == [1, 2]
    for r in rep.rows:
        assert abs(r["Z"] - r["Z_exact"]) <= 4 * r["Z_stderr"]
    assert set(rep.tables) == {"desint", "sweep", "sweep_sup", "sandwich", "weighted_weak"}


def test_report_serialisation(small_report):
    doc = small_report.to_dict()
    assert doc["passed"] is True
    text = small_report.rows_csv("seed=5")
    assert text.startswith("# seed=5\n")
    assert "pair_gap" in text.splitlines()[1]


def test_truncated_sequence_flags_failure():
    rep = gaussian_bv_experiment({**SMALL, "N_max": 1})
    assert not rep.passed
    assert "sufficient_tail" in rep.failed_flags()


def test_trivial_potential():
    rep = gaussian_bv_experiment({**SMALL, "f": {"kind": "zero"}})
    assert rep.flags["Z_within_stderr"]
    assert all(r["Z"] == 1.0 for r in rep.rows)
    assert rep.flags["sandwich_convergence"]


def test_invalid_experiment_config():
    with pytest.raises(ValueError):
        gaussian_bv_experiment({**SMALL, "N_max": 3})
    with pytest.raises(ValueError):
        gaussian_bv_experiment({**SMALL, "pairing_source": "missing"})
    with pytest.raises(ValueError):
        gaussian_bv_experiment({**SMALL, "sigma2": [1.0]})


def test_default_experiment_shape():
    assert DEFAULT_EXPERIMENT["D"] == 4
    assert DEFAULT_EXPERIMENT["sigma2"] == "bridge"
    assert len(DEFAULT_EXPERIMENT["pairing_tests"]) == 5
    assert len(DEFAULT_EXPERIMENT["energy_tests"]) == 3


# generic tools on a 1-d refinement sequence

@pytest.fixture(scope="module")
def sequence():
    rho = GaussianDensity([0.0], [1.0])
    out = []
    for k, r in enumerate([1 / 4, 1 / 8, 1 / 16, 1 / 32]):
        out.append((k + 1, assemble(GridSpec.from_bounds(r, [-7.0], [7.0]), rho)))
    ref = assemble(GridSpec.from_bounds(1 / 128, [-7.0], [7.0]), rho)
    return out, ref, rho


def test_m1_liminf(sequence):
    seq, ref, _ = sequence
    f = lambda x: np.exp(-0.5 * x[:, 0] ** 2)  # noqa: E731
    rep = m1_liminf_diagnostic(f, 1.0, seq, ref, tests={"cos": lambda x: np.cos(x[:, 0])})
    assert rep.flags["liminf"], rep.rows
    assert rep.flags["pairings"]


def test_m2_recovery(sequence):
    seq, _, rho = sequence
    u = lambda x: np.sin(x[:, 0])  # noqa: E731
    du = lambda x: np.cos(x)  # noqa: E731
    rep = m2_recovery_diagnostic(u, du, seq, rho, GridSpec.from_bounds(1 / 64, [-7.0], [7.0]))
    # E cos^2(Z) = (1 + exp(-2)) / 2
    assert rep.meta["limit_energy"] == pytest.approx((1 + math.exp(-2)) / 2, rel=1e-8)
    assert rep.flags["tail_gap"] and rep.flags["tail_trend"]


def test_strong_convergence_and_sandwich(sequence):
    seq, ref, _ = sequence
    g = lambda x: 1.0 / (1.0 + x[:, 0] ** 2)  # noqa: E731
    tests = {"one": lambda x: np.ones(len(x)), "x2": lambda x: x[:, 0] ** 2}

    def entry(N, F):
        return SectionEntry(N, F.interpolate(g), F.M, {n: F.interpolate(t) for n, t in tests.items()})

    series = SectionSeries([entry(N, F) for N, F in seq], entry(np.inf, ref))
    rep = strong_convergence_check(series, tol=5e-3)
    assert rep.flags == {"weak": True, "strong": True}
    lo = [e.u - 0.1 for e in series.entries]
    hi = [e.u + 0.1 for e in series.entries]
    assert sandwich_check(series, lo, hi).flags["hypothesis"]
    bad = sandwich_check(series, [e.u + 0.1 for e in series.entries], hi)
    assert bad.flags == {"hypothesis": False}
