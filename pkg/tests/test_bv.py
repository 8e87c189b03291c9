import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from kuhnfem.bv import (
    BVFunction,
    bv_envelopes,
    exact_partition_function,
    gaussian_factor,
    jordan_decompose,
    partition_function,
    potential_Q,
)

steps = st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=5, unique=True)
jumps = st.lists(st.floats(-2, 2, allow_nan=False), min_size=5, max_size=5)


def _staircase(b, j, closed):
    b = sorted(b)
    return BVFunction.staircase(b, j[:len(b)], base=0.3, closed=closed)


def test_step_values_and_limits():
    f = BVFunction.step(0.0, 2.0)
    assert f(np.array([-1.0, 0.0, 1e-12])) == pytest.approx([0.0, 0.0, 2.0])
    assert BVFunction.step(0.0, 2.0, closed=True)(0.0) == 2.0
    assert list(f.jump_points) == [0.0]
    assert f.total_variation == 2.0
    assert f.sup_norm == 2.0


def test_validation():
    with pytest.raises(ValueError):
        BVFunction([0.0], [1.0, 0.0], [0.0, 0.0], [0.0])
    with pytest.raises(ValueError):
        BVFunction([1.0, 0.0], [0, 0, 0], [0, 0, 0], [0, 0])
    with pytest.raises(ValueError):
        BVFunction.from_dict({"kind": "nope"})


def test_dict_roundtrip():
    f = BVFunction.from_dict({"kind": "clip", "width": 0.5, "height": 2.0})
    g = BVFunction.from_dict(f.to_dict())
    x = np.linspace(-2, 2, 101)
    assert np.array_equal(f(x), g(x))
    assert f.total_variation == pytest.approx(4.0)
    assert len(f.jump_points) == 0


@given(steps, jumps, st.booleans())
@settings(max_examples=60, deadline=None)
def test_jordan_reconstruction(b, j, closed):
    f = _staircase(b, j, closed)
    a, f1, f2 = jordan_decompose(f)
    x = np.concatenate([np.linspace(-5, 5, 401), f.breaks])
    x.sort()
    assert np.allclose(a + f1(x) - f2(x), f(x), atol=1e-12)
    assert np.all(np.diff(f1(x)) >= -1e-12) and np.all(np.diff(f2(x)) >= -1e-12)
    assert f1.total_variation + f2.total_variation == pytest.approx(f.total_variation)


@given(steps, jumps, st.booleans(), st.sampled_from([1, 2, 4, 8, 16]))
@settings(max_examples=60, deadline=None)
def test_envelope_sandwich(b, j, closed, m):
    f = _staircase(b, j, closed)
    lo, hi = bv_envelopes(f, m)
    x = np.concatenate([np.random.default_rng(m).uniform(-5, 5, 2000), f.breaks])
    assert np.all(lo(x) <= f(x) + 1e-12)
    assert np.all(f(x) <= hi(x) + 1e-12)


def test_envelope_gap_shrinks_away_from_jumps():
    f = BVFunction.piecewise_linear([-1.0, 1.0], [0.0, 1.0])
    g = BVFunction(f.breaks, f.slopes, f.intercepts, f.point_values)
    x = np.linspace(-3, 3, 1001)
    gaps = []
    for m in (2, 4, 8, 16, 32, 64):
        lo, hi = bv_envelopes(g, m)
        gaps.append(np.max(hi(x) - lo(x)))
    assert all(q < p for p, q in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 4 * 0.5 / 64 + 1e-12


def test_window_extrema_and_modulus():
    f = BVFunction.staircase([0.0, 1.0], [1.0, -3.0])
    inf, sup = f.window_extrema([-0.5, 0.5], [0.5, 1.5])
    assert inf.tolist() == [0.0, -2.0]
    assert sup.tolist() == [1.0, 1.0]
    assert f.modulus(0.1) == 3.0
    assert f.modulus(1.5) == 3.0


def test_gaussian_factor_step_closed_form():
    lam, s = 0.7, 0.4
    val = gaussian_factor(BVFunction.step(0.0, 1.0), lam, s)
    assert val == pytest.approx(0.5 + 0.5 * np.exp(-lam), rel=1e-14)
    f = BVFunction.step(0.2, 1.0)
    assert gaussian_factor(f, lam, s) == pytest.approx(stats.norm.cdf(0.2 / s) + stats.norm.sf(0.2 / s) * np.exp(-lam))


def test_partition_function_mc_against_product():
    f = BVFunction.step()
    lam, sigma = [0.5, 0.5, 0.5], [1.0, 0.5, 0.3]
    for N in (0, 1, 3):
        z, se = partition_function(f, lam, sigma, N, 100_000, seed=7)
        ex = exact_partition_function(f, lam, sigma, N)
        assert abs(z - ex) <= 4 * max(se, 1e-15)
    z0, se0 = partition_function(f, lam, sigma, 0, 10, seed=1)
    assert z0 == 1.0 and se0 == 0.0


def test_partition_function_deterministic_and_validated():
    f = BVFunction.step()
    a = partition_function(f, [1.0], [1.0], 1, 1000, seed=3)
    assert a == partition_function(f, [1.0], [1.0], 1, 1000, seed=3)
    with pytest.raises(ValueError):
        partition_function(f, [1.0], [1.0], 2, 1000)
    with pytest.raises(ValueError):
        potential_Q(f, [-1.0], np.zeros((1, 1)))
