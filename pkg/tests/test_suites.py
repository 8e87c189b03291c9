import math

import numpy as np
import pytest

from kuhnfem.suites import approximation_bounds, basis_suite, cell_volume_mc, freudenthal_hat


def test_freudenthal_hat_values():
    assert freudenthal_hat([[0.0, 0.0]])[0] == 1.0
    assert freudenthal_hat([[0.5, 0.5]])[0] == 0.5
    # opposite signs add up in the closed form
    assert freudenthal_hat([[0.5, -0.5]])[0] == 0.0
    assert freudenthal_hat([[1.5, 0.0]])[0] == 0.0


@pytest.mark.parametrize("d", [1, 2, 3])
def test_basis_suite_small(d):
    checks = basis_suite(d, 0.5, seed=1, samples=5000, volume_samples=20000, half_width=1.0)
    failed = [c.name for c in checks if not c.passed]
    assert not failed
    assert {c.name for c in checks} >= {"partition_of_unity", "tent_mass", "weak_gradient_identity", "fd_gradient"}


def test_cell_volume_every_perm():
    rng = np.random.default_rng(0)
    for perm in [(0, 1, 2), (2, 0, 1), (1, 2, 0)]:
        vol, sig = cell_volume_mc(3, 0.5, 60000, rng, perm)
        assert sig <= 4
        assert vol == pytest.approx(0.125 / 6, rel=0.05)


def test_approximation_bounds_d1_single_scale():
    rows = approximation_bounds(1, 0.25)
    assert len(rows) == 3
    for row in rows:
        for item in ("ii", "iii", "iv"):
            assert row[f"lhs_{item}"] <= row[f"rhs_{item}"], (row["triple"], item)
        assert math.isfinite(row["C_Linf"]) and row["delta_L2nu"] > 0
