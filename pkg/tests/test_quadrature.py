import math

import numpy as np
import pytest

from kuhnfem.quadrature import cube_rule, kuhn_cell_rule, ordered_simplex_rule
from kuhnfem.seeding import task_rng


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_simplex_rule_weights_and_monomials(d):
    Y, W = ordered_simplex_rule(d, 4)
    assert W.sum() == pytest.approx(1 / math.factorial(d), rel=1e-14)
    assert np.all(np.diff(Y, axis=1) <= 0)
    # int over the ordered simplex of y_1^k: k-th moment of the max of d uniforms divided by d!
    for k in range(1, 6):
        exact = d / (k + d) / math.factorial(d)
        assert float(Y[:, 0] ** k @ W) == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("d", [2, 3])
def test_kuhn_rule_covers_cube(d):
    P, W = kuhn_cell_rule(d, 3)
    assert P.shape[0] == math.factorial(d)
    pts = P.reshape(-1, d)
    Wf = np.tile(W, P.shape[0])
    assert Wf.sum() == pytest.approx(1.0)
    # int_[0,1]^d x_1^2 x_2 = 1/6
    assert float(pts[:, 0] ** 2 * pts[:, 1] @ Wf) == pytest.approx(1 / 6, rel=1e-12)


def test_cube_rule():
    X, W = cube_rule(2, 3)
    assert float(X[:, 0] ** 5 @ W) == pytest.approx(1 / 6, rel=1e-13)


def test_task_streams_independent_of_order():
    a = task_rng(7, "x/1").random(5)
    task_rng(7, "y").random(100)
    b = task_rng(7, "x/1").random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, task_rng(7, "x/2").random(5))
    assert not np.array_equal(a, task_rng(8, "x/1").random(5))
