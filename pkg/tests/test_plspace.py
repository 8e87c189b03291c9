import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kuhnfem.plspace import (
    TentCoefficients,
    cell_gradients,
    clip_coefficients,
    eval_sum,
    grad_sq_norm,
    local_average_project,
    weak_gradient,
)
from kuhnfem.suites import fd_gradient, weak_gradient_identity
from kuhnfem.triangulation import GridSpec, PathSimplex


def test_interpolates_affine_functions_exactly():
    grid = GridSpec.symmetric(3, 0.25, 1.0)
    a = np.array([0.3, -1.2, 2.0])
    c = TentCoefficients.from_function(grid, lambda X: X @ a + 0.5)
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (1000, 3))
    assert np.allclose(eval_sum(c, X), X @ a + 0.5, atol=1e-12)
    _, _, G = cell_gradients(c)
    assert np.allclose(G, a, atol=1e-12)


def test_nodal_values_recovered():
    grid = GridSpec.symmetric(2, 0.5, 1.0)
    rng = np.random.default_rng(1)
    vals = rng.standard_normal(grid.node_shape)
    c = TentCoefficients.from_dense(grid, vals)
    assert np.allclose(eval_sum(c, grid.r * grid.nodes()), vals.reshape(-1))


def test_json_roundtrip():
    grid = GridSpec(2, 0.25, (-1, 0), (2, 3))
    c = TentCoefficients(grid, {(0, 1): 1.5, (2, 3): -0.25, (1, 1): 0.0})
    back = TentCoefficients.from_json(c.to_json())
    assert back.weights == c.weights
    assert back.grid == grid
    assert c.bound == 1.5


def test_index_outside_box_rejected():
    with pytest.raises(ValueError):
        TentCoefficients(GridSpec(1, 1.0, (0,), (2,)), {(5,): 1.0})


@pytest.mark.parametrize("d", [1, 2, 3])
def test_weak_gradient_identity(d):
    grid = GridSpec.symmetric(d, 0.5, 1.0)
    assert weak_gradient_identity(grid, 20, np.random.default_rng(d)) <= 1e-14


@pytest.mark.parametrize("d", [1, 2, 3])
def test_finite_differences_match_cell_gradients(d):
    grid = GridSpec.symmetric(d, 0.25, 1.0)
    assert fd_gradient(grid, 300, np.random.default_rng(d)) <= 1e-5


def test_single_cell_squared_gradient():
    grid = GridSpec(2, 0.5, (0, 0), (1, 1))
    c = TentCoefficients.from_dense(grid, np.array([[0.0, 1.0], [3.0, 4.0]]))
    # path (1, 0): 0 -> w(0,1)=1 -> w(1,1)=4
    T = PathSimplex((0, 0), (1, 0), 0.5)
    assert grad_sq_norm(c, T) == pytest.approx((1.0 + 9.0) / 0.25)
    wg = weak_gradient(c)
    assert np.allclose(wg[T.key], [6.0, 2.0])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_clip_is_contraction(seed):
    rng = np.random.default_rng(seed)
    grid = GridSpec.symmetric(2, 0.5, 1.0)
    c = TentCoefficients.from_dense(grid, 2 * rng.standard_normal(grid.node_shape))
    k = clip_coefficients(c)
    assert np.all((k.dense >= 0) & (k.dense <= 1))
    assert np.all(grad_sq_norm(k) <= grad_sq_norm(c) + 1e-12)


def test_local_average_project_of_polynomial():
    grid = GridSpec.symmetric(2, 0.25, 1.0)
    c = local_average_project(lambda X: X[:, 0] ** 2 + X[:, 1], grid)
    nodes = grid.r * grid.nodes()
    # cube mean of x^2 over [a, a+r) is a^2 + a r + r^2/3; of y it is b + r/2
    a, b, r = nodes[:, 0], nodes[:, 1], grid.r
    expect = a * a + a * r + r * r / 3 + b + r / 2
    assert np.allclose(c.dense.reshape(-1), expect, atol=1e-12)
