import math

import numpy as np
import pytest
from scipy import integrate, stats

from kuhnfem.bv import BVFunction
from kuhnfem.densities import (
    BVPerturbedDensity,
    GaussianDensity,
    ProductDensity,
    TabulatedDensity,
    UniformDensity,
    cell_masses,
    density_from_dict,
    grid_for,
)
from kuhnfem.triangulation import GridSpec


def test_gaussian_pdf_matches_scipy():
    rho = GaussianDensity([0.5, -1.0], [2.0, 0.5])
    X = np.random.default_rng(0).standard_normal((50, 2))
    ref = stats.multivariate_normal([0.5, -1.0], np.diag([2.0, 0.5])).pdf(X)
    assert np.allclose(rho(X), ref, rtol=1e-12)


def test_gaussian_support_box_tail():
    rho = GaussianDensity([0.0], [1.0], tail=1e-6)
    out = 2 * stats.norm.sf(rho.upper[0])
    assert out == pytest.approx(1e-6, rel=1e-8)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        GaussianDensity([0.0], [0.0])
    with pytest.raises(ValueError):
        UniformDensity([1.0], [0.0])
    with pytest.raises(ValueError):
        BVPerturbedDensity(GaussianDensity([0.0], [1.0]), BVFunction.step(), [-1.0])
    with pytest.raises(ValueError):
        density_from_dict({"kind": "nope"})


def test_bv_perturbed_normalised():
    rho = BVPerturbedDensity(GaussianDensity([0.3], [0.7]), BVFunction.step(0.0, 1.0), [0.8])
    val, _ = integrate.quad(lambda x: rho(np.array([[x]]))[0], -12, 12, points=[0.0], limit=200)
    assert val == pytest.approx(1.0, abs=1e-10)


def test_bv_perturbed_product_normalisation_d2():
    f = BVFunction.piecewise_linear([-1.0, 1.0], [-0.5, 0.5])
    rho = BVPerturbedDensity(GaussianDensity([0.0, 0.0], [1.0, 0.5]), f, [1.0, 0.3])
    grid = grid_for(rho, 0.25)
    total = cell_masses(rho, grid, order=6).sum()
    assert total == pytest.approx(1.0, abs=1e-8)


def test_product_and_marginals():
    rho = ProductDensity([GaussianDensity([0.0], [1.0]), UniformDensity([0.0], [2.0])])
    x = np.array([[0.3, 1.0]])
    assert rho(x)[0] == pytest.approx(stats.norm.pdf(0.3) * 0.5)
    assert isinstance(rho.marginal(1), UniformDensity)


def test_tabulated_interpolation():
    axes = [np.linspace(0, 1, 3)]
    rho = TabulatedDensity(axes, np.array([0.0, 2.0, 0.0]))
    assert rho(np.array([[0.25], [0.5], [2.0]])) == pytest.approx([1.0, 2.0, 0.0])


def test_from_dict_roundtrip_kinds():
    doc = {"kind": "bv_perturbed", "base": {"kind": "gaussian", "mean": [0.0], "var": [1.0]},
           "f": {"kind": "step", "at": 0.0}, "weights": 0.5}
    rho = density_from_dict(doc)
    assert isinstance(rho, BVPerturbedDensity)
    assert rho.Z == pytest.approx(0.5 + 0.5 * math.exp(-0.5))


@pytest.mark.parametrize("d,r", [(1, 0.25), (2, 0.5), (3, 0.5)])
def test_cell_masses_sum_to_box_mass(d, r):
    # a lattice-aligned box keeps the density smooth on every cell
    rho = UniformDensity([-0.5] * d, [1.0] * d)
    grid = GridSpec.symmetric(d, r, 1.5)
    m = cell_masses(rho, grid, order=3)
    assert m.shape == (len(grid.cube_anchors()), math.factorial(d))
    assert m.sum() == pytest.approx(1.0, abs=1e-12)


def test_cell_masses_gaussian_exact():
    rho = GaussianDensity([0.0], [1.0])
    grid = GridSpec(1, 0.5, (0,), (2,))
    m = cell_masses(rho, grid).reshape(-1)
    ref = np.diff(stats.norm.cdf([0.0, 0.5, 1.0]))
    assert np.allclose(m, ref, rtol=1e-10)


def test_grid_for_covers_support():
    rho = GaussianDensity([0.1, -0.2], [1.0, 2.0])
    g = grid_for(rho, 0.3)
    assert np.all(g.lower <= rho.lower) and np.all(g.upper >= rho.upper)
