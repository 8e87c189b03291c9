"""Probability densities on R^d with simplex-cell quadrature."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.interpolate import RegularGridInterpolator

from .bv import BVFunction, gaussian_factor
from .quadrature import agree, flag_disagreement, kuhn_cell_rule
from .triangulation import GridSpec, PathSimplex, all_perms

__all__ = [
    "Density",
    "GaussianDensity",
    "UniformDensity",
    "ProductDensity",
    "BVPerturbedDensity",
    "TabulatedDensity",
    "density_from_dict",
    "cell_integral",
    "cell_masses",
    "grid_for",
    "DEFAULT_TAIL",
]

DEFAULT_TAIL = 1e-10


class Density:
    """Interface: ``d``, ``pdf(x)`` for (n, d) arrays, a support box and its tail mass."""

    d: int
    lower: np.ndarray
    upper: np.ndarray
    tail_mass: float

    def pdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x) -> np.ndarray:
        return self.pdf(x)

    def marginal(self, k: int) -> "Density":
        raise NotImplementedError(f"{type(self).__name__} has no product marginals")

    @property
    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lower, self.upper


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, d)


@dataclass
class GaussianDensity(Density):
    mean: np.ndarray
    var: np.ndarray
    tail: float = DEFAULT_TAIL

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.var = np.broadcast_to(np.asarray(self.var, dtype=float), self.mean.shape).copy()
        if np.any(self.var <= 0):
            raise ValueError("variances must be positive")
        self.d = len(self.mean)
        sd = np.sqrt(self.var)
        # per-coordinate two-sided tail tail/d keeps the total below ``tail``
        half = stats.norm.isf(self.tail / (2 * self.d))
        self.lower = self.mean - half * sd
        self.upper = self.mean + half * sd
        self.tail_mass = self.tail

    def pdf(self, x) -> np.ndarray:
        x = _as_points(x, self.d)
        z = (x - self.mean) ** 2 / self.var
        norm = np.prod(np.sqrt(2 * np.pi * self.var))
        return np.exp(-0.5 * z.sum(axis=1)) / norm

    def marginal(self, k: int) -> "GaussianDensity":
        return GaussianDensity([self.mean[k]], [self.var[k]], self.tail / self.d)


@dataclass
class UniformDensity(Density):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if np.any(self.upper <= self.lower):
            raise ValueError("empty uniform box")
        self.d = len(self.lower)
        self.tail_mass = 0.0
        self._h = 1.0 / float(np.prod(self.upper - self.lower))

    def pdf(self, x) -> np.ndarray:
        x = _as_points(x, self.d)
        inside = np.all((x >= self.lower) & (x < self.upper), axis=1)
        return np.where(inside, self._h, 0.0)

    def marginal(self, k: int) -> "UniformDensity":
        return UniformDensity([self.lower[k]], [self.upper[k]])


@dataclass
class ProductDensity(Density):
    factors: list

    def __post_init__(self):
        for f in self.factors:
            if f.d != 1:
                raise ValueError("product factors must be one-dimensional")
        self.d = len(self.factors)
        self.lower = np.array([f.lower[0] for f in self.factors])
        self.upper = np.array([f.upper[0] for f in self.factors])
        self.tail_mass = float(sum(f.tail_mass for f in self.factors))

    def pdf(self, x) -> np.ndarray:
        x = _as_points(x, self.d)
        out = np.ones(len(x))
        for k, f in enumerate(self.factors):
            out *= f.pdf(x[:, k:k + 1])
        return out

    def marginal(self, k: int) -> Density:
        return self.factors[k]


@dataclass
class BVPerturbedDensity(Density):
    """``exp(-sum_k lam_k f(x_k)) * base(x) / Z``.

    ``Z`` is computed from the product structure when the base factorises
    into 1-d Gaussians; otherwise it must be supplied.
    """

    base: Density
    f: BVFunction
    weights: np.ndarray
    Z: float | None = None

    def __post_init__(self):
        self.d = self.base.d
        self.weights = np.broadcast_to(np.asarray(self.weights, dtype=float), (self.d,)).copy()
        if np.any(self.weights < 0):
            raise ValueError("potential weights must be nonnegative")
        if self.Z is None:
            self.Z = float(np.prod([self._factor_Z(k) for k in range(self.d)]))
        self.lower, self.upper = self.base.lower, self.base.upper
        # the perturbation changes tail mass by at most exp(2 ||f|| sum lam)
        spread = math.exp(2 * self.f.sup_norm * float(self.weights.sum()))
        self.tail_mass = self.base.tail_mass * spread

    def _factor_Z(self, k: int) -> float:
        m = self.base.marginal(k)
        if not isinstance(m, GaussianDensity):
            raise ValueError("normalisation Z must be given for non-Gaussian bases")
        shifted = BVFunction(
            self.f.breaks - m.mean[0], self.f.slopes, self.f.intercepts + self.f.slopes * m.mean[0], self.f.point_values
        )
        return gaussian_factor(shifted, float(self.weights[k]), float(np.sqrt(m.var[0])))

    def pdf(self, x) -> np.ndarray:
        x = _as_points(x, self.d)
        return np.exp(-(self.f(x) @ self.weights)) * self.base.pdf(x) / self.Z

    def marginal(self, k: int) -> "BVPerturbedDensity":
        base = self.base.marginal(k)
        return BVPerturbedDensity(base, self.f, [self.weights[k]])


@dataclass
class TabulatedDensity(Density):
    """Samples on a tensor grid with linear or nearest interpolation; zero outside."""

    axes: list
    values: np.ndarray
    method: str = "linear"
    tail: float = 0.0
    _interp: RegularGridInterpolator = field(init=False, repr=False)

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=float) for a in self.axes]
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < 0):
            raise ValueError("tabulated density must be nonnegative")
        self.d = len(self.axes)
        self.lower = np.array([a[0] for a in self.axes])
        self.upper = np.array([a[-1] for a in self.axes])
        self.tail_mass = self.tail
        self._interp = RegularGridInterpolator(self.axes, self.values, method=self.method, bounds_error=False, fill_value=0.0)

    def pdf(self, x) -> np.ndarray:
        return self._interp(_as_points(x, self.d))


def density_from_dict(doc: Mapping) -> Density:
    kind = doc["kind"]
    if kind == "gaussian":
        d = int(doc.get("d", len(doc.get("mean", [0.0]))))
        mean = doc.get("mean", [0.0] * d)
        var = doc.get("var", [1.0] * d)
        return GaussianDensity(mean, var, float(doc.get("tail", DEFAULT_TAIL)))
    if kind == "uniform":
        return UniformDensity(doc["lower"], doc["upper"])
    if kind == "product":
        return ProductDensity([density_from_dict(f) for f in doc["factors"]])
    if kind == "bv_perturbed":
        base = density_from_dict(doc["base"])
        return BVPerturbedDensity(base, BVFunction.from_dict(doc["f"]), doc.get("weights", 1.0), doc.get("Z"))
    if kind == "tabulated":
        return TabulatedDensity(doc["axes"], np.asarray(doc["values"]), doc.get("method", "linear"))
    raise ValueError(f"unknown density kind {kind!r}")


def grid_for(rho: Density, r: float) -> GridSpec:
    """Smallest ``r``-lattice box covering the support box of ``rho``."""
    lo = tuple(int(math.floor(v / r + 1e-9)) for v in rho.lower)
    hi = tuple(int(math.ceil(v / r - 1e-9)) for v in rho.upper)
    return GridSpec(rho.d, r, lo, hi)


def _cell_quad(fn, anchors: np.ndarray, perm_ids: np.ndarray, r: float, order: int) -> np.ndarray:
    d = anchors.shape[1]
    P, W = kuhn_cell_rule(d, order)
    out = np.empty(len(anchors))
    q = len(W)
    chunk = max(1, 400_000 // q)
    for s in range(0, len(anchors), chunk):
        a = anchors[s:s + chunk].astype(float)
        pts = r * (a[:, None, :] + P[perm_ids[s:s + chunk]])
        vals = np.asarray(fn(pts.reshape(-1, d)), dtype=float).reshape(len(a), q)
        out[s:s + chunk] = (vals @ W) * r ** d
    return out


def cell_integral(rho, T: PathSimplex, order: int = 6, rtol: float = 1e-8) -> float:
    """``int_{D_T} rho dx`` with a consecutive-order cross-check."""
    perms = all_perms(T.d)
    a = np.asarray([T.anchor])
    pid = np.asarray([perms.index(T.perm)])
    lo = _cell_quad(rho, a, pid, T.r, order)
    hi = _cell_quad(rho, a, pid, T.r, order + 1)
    flag_disagreement(agree(lo, hi, rtol, 1e-300), "cell integral")
    return float(hi[0])


def cell_masses(rho, grid: GridSpec, order: int = 6, rtol: float = 1e-8, atol: float = 1e-15) -> np.ndarray:
    """``int_{D_T} rho`` for every cell of ``grid``, shape (n_cubes, d!)."""
    anchors = grid.cube_anchors()
    nperm = math.factorial(grid.d)
    A = np.repeat(anchors, nperm, axis=0)
    pid = np.tile(np.arange(nperm), len(anchors))
    lo = _cell_quad(rho, A, pid, grid.r, order)
    hi = _cell_quad(rho, A, pid, grid.r, order + 1)
    flag_disagreement(agree(lo, hi, rtol, atol), "cell masses")
    return hi.reshape(len(anchors), nperm)
