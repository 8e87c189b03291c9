"""Residual and perturbation functionals, their dual-norm estimates and moduli.

For primal functions ``phi, eta`` on unit scale and a nonnegative ``g``::

    I(x) = sum_a phi(x/r - a) * int eta(z) g(r(a + z)) dz
    R(x) = sum_a phi(x/r - a) * int eta(z) |g(x) - g(r(a + z))| dz

with ``a`` running over integer lattice indices (``r^-d int eta_r^a`` after the
substitution ``y = r(a + z)``).  Both the ``z``-integrals and the outer
``x``-integrals use the Kuhn-cell quadrature; every catalog member is affine
on each unit cell, so these rules are exact in the primal factor.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize

from .densities import Density, grid_for
from .quadrature import QuadratureWarning, kuhn_cell_rule
from .tents import PrimalFunction, catalog_pairs, eval_primal, pair_id
from .triangulation import GridSpec, lattice_floor

__all__ = [
    "default_order",
    "residual_apply",
    "perturbation_apply",
    "functional_integrals",
    "delta_estimate",
    "C_estimate",
    "DualEstimate",
    "modulus",
    "Modulus",
    "mopert_bound",
]

log = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-300


def default_order(d: int) -> int:
    return {1: 10, 2: 3}.get(d, 2)


def _eta_rule(eta: PrimalFunction, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit-scale nodes ``z`` and weights ``w * eta(z)`` covering ``supp eta``."""
    P, W = kuhn_cell_rule(eta.d, order)
    cubes = eta.support_cubes()
    pts = (cubes[:, None, None, :] + P[None]).reshape(-1, eta.d)
    wts = np.tile(W, len(cubes) * P.shape[0])
    vals = eval_primal(eta, pts) * wts
    keep = vals != 0.0
    return pts[keep], vals[keep]


def _offsets(phis: Iterable[PrimalFunction]) -> np.ndarray:
    offs = np.unique(np.concatenate([p.support_cubes() for p in phis]), axis=0)
    return offs


class _Averager:
    """Caches ``g`` on the nodes ``r(a + z)`` for one ``(g, eta, r)``."""

    def __init__(self, g, eta: PrimalFunction, r: float, order: int):
        self.g, self.r, self.d = g, r, eta.d
        self.Z, self.w = _eta_rule(eta, order)

    def table(self, a: np.ndarray) -> np.ndarray:
        """``g(r(a + z_m))`` for integer rows ``a``, shape (len(a), m)."""
        pts = self.r * (a[:, None, :].astype(float) + self.Z[None])
        return np.asarray(self.g(pts.reshape(-1, self.d)), dtype=float).reshape(len(a), len(self.w))


def _unique_rows(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u, inv = np.unique(a, axis=0, return_inverse=True)
    return u, inv.reshape(-1)


def _evaluate(g, phis: Sequence[PrimalFunction], eta: PrimalFunction, r: float, X: np.ndarray, order: int,
              want_R: bool = True, want_I: bool = True, gX: np.ndarray | None = None):
    """``I`` and ``R`` for each ``phi`` in ``phis`` at points ``X``; shapes (len(phis), n)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    avg = _Averager(g, eta, r, order)
    k, y = lattice_floor(X, r)
    offs = _offsets(phis)
    if gX is None and want_R:
        gX = np.asarray(g(X), dtype=float)
    Iout = np.zeros((len(phis), n)) if want_I else None
    Rout = np.zeros((len(phis), n)) if want_R else None
    for c in offs:
        # phi weights for this offset: phi(x/r - a) with a = k - c
        pw = np.stack([eval_primal(p, y + c) if _has_offset(p, c) else np.zeros(n) for p in phis])
        active = np.any(pw != 0.0, axis=0)
        if not np.any(active):
            continue
        idx = np.flatnonzero(active)
        a = k[idx] - c
        au, inv = _unique_rows(a)
        G = avg.table(au)
        if want_I:
            A = G @ avg.w
            Iout[:, idx] += pw[:, idx] * A[inv]
        if want_R:
            J = np.empty(len(idx))
            step = max(1, 2_000_000 // max(1, G.shape[1]))
            for s in range(0, len(idx), step):
                sl = slice(s, s + step)
                J[sl] = np.abs(gX[idx[sl], None] - G[inv[sl]]) @ avg.w
            Rout[:, idx] += pw[:, idx] * J
    return Iout, Rout


def _has_offset(p: PrimalFunction, c: np.ndarray) -> bool:
    return bool(np.any(np.all(p.support_cubes() == c, axis=1)))


def residual_apply(g, phi: PrimalFunction, eta: PrimalFunction, r: float, x, order: int | None = None) -> np.ndarray:
    """``R_r^{phi,eta}(g)`` at points ``x`` (n, d)."""
    order = order or default_order(phi.d)
    _, R = _evaluate(g, [phi], eta, r, np.atleast_2d(x), order, want_I=False)
    return R[0]


def perturbation_apply(g, phi: PrimalFunction, eta: PrimalFunction, r: float, x, order: int | None = None) -> np.ndarray:
    """``I_r^{phi,eta}(g)`` at points ``x`` (n, d)."""
    order = order or default_order(phi.d)
    I, _ = _evaluate(g, [phi], eta, r, np.atleast_2d(x), order, want_R=False)
    return I[0]


def _x_rule(grid: GridSpec, order: int, chunk_cubes: int = 4096):
    """Yield ``(points, weights)`` chunks covering every cell of ``grid``."""
    P, W = kuhn_cell_rule(grid.d, order)
    Pflat = P.reshape(-1, grid.d)
    Wflat = np.tile(W, P.shape[0]) * grid.r ** grid.d
    anchors = grid.cube_anchors()
    for s in range(0, len(anchors), chunk_cubes):
        a = anchors[s:s + chunk_cubes].astype(float)
        pts = grid.r * (a[:, None, :] + Pflat[None])
        yield pts.reshape(-1, grid.d), np.tile(Wflat, len(a))


def _expand(grid: GridSpec, cells: int) -> GridSpec:
    return GridSpec(grid.d, grid.r, tuple(v - cells for v in grid.lo), tuple(v + cells for v in grid.hi))


def functional_integrals(g, pairs: Sequence[tuple[PrimalFunction, PrimalFunction]], r: float, box: GridSpec,
                         order: int | None = None, margin: int = 3) -> dict[str, tuple[float, float]]:
    """``{pair_id: (int I, int R)}`` over ``box`` widened by ``margin`` cells on each side."""
    order = order or default_order(box.d)
    grid = _expand(GridSpec(box.d, r, *_rescale(box, r)), margin)
    sums = {pair_id(*p): [0.0, 0.0] for p in pairs}
    for X, w in _x_rule(grid, order):
        gX = np.asarray(g(X), dtype=float)
        for eta, phis in _group_pairs(pairs).items():
            I, R = _evaluate(g, phis, eta, r, X, order, gX=gX)
            for phi, Ip, Rp in zip(phis, I, R):
                acc = sums[pair_id(phi, eta)]
                acc[0] += float(Ip @ w)
                acc[1] += float(Rp @ w)
    return {k: (v[0], v[1]) for k, v in sums.items()}


def _rescale(box: GridSpec, r: float) -> tuple[tuple[int, ...], tuple[int, ...]]:
    lo = tuple(int(math.floor(v / r + 1e-9)) for v in box.lower)
    hi = tuple(int(math.ceil(v / r - 1e-9)) for v in box.upper)
    return lo, hi


@dataclass
class DualEstimate:
    """Catalog maximum of a dual-norm functional plus per-pair values."""

    value: float
    per_pair: dict = field(default_factory=dict)
    argmax: str = ""
    mass_deficit: float = 0.0
    flagged: bool = False


def _weight(rho, kappa):
    if kappa is None:
        return rho
    return lambda x: kappa(x) * rho(x)


def _group_pairs(pairs):
    by_eta: dict[PrimalFunction, list[PrimalFunction]] = {}
    for phi, eta in pairs:
        by_eta.setdefault(eta, []).append(phi)
    return by_eta


def delta_estimate(rho: Density, kappa: Callable | None, r: float,
                   pairs: Sequence[tuple[PrimalFunction, PrimalFunction]] | None = None,
                   order: int | None = None, margin: int = 2, grid: GridSpec | None = None) -> DualEstimate:
    """``max_(phi,eta) (int R(kappa rho)^2 / rho dx)^(1/2)`` over catalog pairs.

    The integral runs over the support box of ``rho`` widened by ``margin``
    cells.  Points with ``rho`` below ``1e-300`` are excluded and the residual
    mass found there is reported as ``mass_deficit``.
    """
    d = rho.d
    order = order or default_order(d)
    pairs = pairs if pairs is not None else catalog_pairs(d)
    if kappa is not None and getattr(kappa, "is_zero", False):
        return DualEstimate(0.0, {pair_id(*p): 0.0 for p in pairs}, pair_id(*pairs[0]) if pairs else "")
    g = _weight(rho, kappa)
    grid = _expand(grid or grid_for(rho, r), margin)
    sums: dict[str, float] = {}
    deficit = 0.0
    for X, w in _x_rule(grid, order):
        rx = np.asarray(rho(X), dtype=float)
        gX = np.asarray(g(X), dtype=float)
        ok = rx >= DENSITY_FLOOR
        for eta, phis in _group_pairs(pairs).items():
            _, R = _evaluate(g, phis, eta, r, X, order, want_I=False, gX=gX)
            for phi, Rp in zip(phis, R):
                key = pair_id(phi, eta)
                sums[key] = sums.get(key, 0.0) + float(np.sum(np.where(ok, Rp ** 2 / np.where(ok, rx, 1.0), 0.0) * w))
                deficit = max(deficit, float(np.sum(np.where(ok, 0.0, Rp) * w)))
    if deficit > 0:
        log.info("delta estimate: residual mass %.3e on cells with vanishing density", deficit)
    per = {k: math.sqrt(v) for k, v in sums.items()}
    best = max(per, key=per.get)
    return DualEstimate(per[best], per, best, deficit)


def C_estimate(rho: Density, kappa: Callable | None, r: float,
               pairs: Sequence[tuple[PrimalFunction, PrimalFunction]] | None = None,
               order: int | None = None, samples: int | None = None, rtol: float = 0.05,
               grid: GridSpec | None = None) -> DualEstimate:
    """``max_(phi,eta) ess sup I(kappa rho) / rho`` over the support box of ``rho``.

    The supremum is sampled on a uniform sub-grid with ``samples`` points per
    cube axis (default 16, 4 and 2 for d = 1, 2 and higher) and cross-checked against twice that density; disagreement
    beyond ``rtol`` raises a ``QuadratureWarning``.
    """
    d = rho.d
    order = order or default_order(d)
    pairs = pairs if pairs is not None else catalog_pairs(d)
    if kappa is not None and getattr(kappa, "is_zero", False):
        return DualEstimate(0.0, {pair_id(*p): 0.0 for p in pairs}, pair_id(*pairs[0]) if pairs else "")
    g = _weight(rho, kappa)
    grid = grid or grid_for(rho, r)
    samples = samples or {1: 16, 2: 4}.get(d, 2)
    results = []
    for k in (samples, 2 * samples):
        results.append(_sup_ratio(g, rho, pairs, r, grid, order, k))
    coarse, fine = results
    flagged = any(
        abs(coarse[key] - fine[key]) > rtol * max(abs(fine[key]), 1e-300)
        for key in fine if math.isfinite(fine[key])
    )
    if flagged:
        warnings.warn("C estimate: sampled suprema did not settle under refinement", QuadratureWarning, stacklevel=2)
    best = max(fine, key=fine.get)
    return DualEstimate(fine[best], fine, best, 0.0, flagged)


def _sup_ratio(g, rho, pairs, r, grid: GridSpec, order: int, k: int) -> dict:
    d = grid.d
    t = (np.arange(k) + 0.5) / k
    sub = np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1).reshape(-1, d)
    anchors = grid.cube_anchors()
    out: dict[str, float] = {pair_id(*p): 0.0 for p in pairs}
    step = max(1, 60_000 // len(sub))
    for s in range(0, len(anchors), step):
        X = (grid.r * (anchors[s:s + step, None, :] + sub[None])).reshape(-1, d)
        rx = np.asarray(rho(X), dtype=float)
        for eta, phis in _group_pairs(pairs).items():
            I, _ = _evaluate(g, phis, eta, r, X, order, want_R=False)
            for phi, Ip in zip(phis, I):
                pos = Ip > 0
                bad = pos & (rx < DENSITY_FLOOR)
                if np.any(bad):
                    val = math.inf
                else:
                    ratio = np.where(pos, Ip / np.where(rx >= DENSITY_FLOOR, rx, 1.0), 0.0)
                    val = float(ratio.max()) if len(ratio) else 0.0
                key = pair_id(phi, eta)
                out[key] = max(out[key], val)
    return out


@dataclass
class Modulus:
    omega: float
    D: float | None = None


def modulus(g: Callable, eps: float, lower, upper, budget: int = 20_000, grad: Callable | None = None,
            seed: int = 0) -> Modulus:
    """Estimate ``sup |g(x) - g(y)|`` over ``max_j |x_j - y_j| <= 4 eps`` and ``max_i ||d_i g||``.

    ``g`` must vanish outside the box ``[lower, upper]``.  A grid scan with a
    stencil of offsets is followed by local maximisation from the best pairs.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    d = len(lower)
    h = 4.0 * eps
    pad = lower - h, upper + h
    n_axis = max(3, int(round(budget ** (1.0 / d))))
    axes = [np.linspace(a, b, n_axis) for a, b in zip(*pad)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    ks = 5 if d <= 2 else 3
    st = np.linspace(-h, h, ks)
    stencil = np.stack(np.meshgrid(*([st] * d), indexing="ij"), axis=-1).reshape(-1, d)
    gX = np.asarray(g(X), dtype=float)
    best_val, best = -1.0, []
    for off in stencil:
        diff = np.abs(gX - np.asarray(g(X + off), dtype=float))
        j = int(np.argmax(diff))
        best.append((float(diff[j]), X[j], off))
        best_val = max(best_val, float(diff[j]))
    best.sort(key=lambda t: -t[0])

    def neg(z):
        x, u = z[:d], z[d:]
        y = x + h * np.tanh(u)
        return -abs(float(g(x[None])[0]) - float(g(y[None])[0]))

    omega = max(best_val, 0.0)
    for _, x0, off in best[:4]:
        u0 = np.arctanh(np.clip(off / h, -0.999, 0.999)) if h > 0 else np.zeros(d)
        res = optimize.minimize(neg, np.concatenate([x0, u0]), method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000})
        omega = max(omega, -float(res.fun))
    D = None
    if grad is not None:
        G = np.abs(np.asarray(grad(X), dtype=float).reshape(len(X), d))
        D = float(G.max())
        j = int(np.argmax(G.max(axis=1)))

        def negg(x):
            return -float(np.abs(np.asarray(grad(x[None]), dtype=float)).max())

        res = optimize.minimize(negg, X[j], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14})
        D = max(D, -float(res.fun))
    return Modulus(omega, D)


def mopert_bound(c1: float, c2: float, mode: str, delta: float, r: float, d: int,
                 C_lip: float | None = None, delta_2r: float | None = None) -> float:
    """Upper bound on the perturbed delta in ``L^2(w nu)`` for a perturbation with values in ``[c1, c2]``.

    ``mode`` is ``"lipschitz"`` (needs ``C_lip``) or ``"increasing"`` /
    ``"decreasing"`` (needs ``delta_2r``, the unperturbed delta at ``2r``).
    """
    if not 0 < c1 < c2:
        raise ValueError(f"need 0 < c1 < c2, got c1={c1}, c2={c2}")
    head = c2 ** 2 * math.sqrt(2.0 / c1 ** 3) * delta
    if mode == "lipschitz":
        if C_lip is None:
            raise ValueError("Lipschitz mode needs C_lip")
        return head + 4.0 * r * c2 * math.sqrt(2.0 * 9 ** d * d / c1 ** 3) * C_lip
    if mode in ("increasing", "decreasing"):
        if delta_2r is None:
            raise ValueError("monotone mode needs delta_2r")
        return head + 2.0 * c2 ** 2 * math.sqrt(9 ** d * 2.0 / c1 ** 3 * delta_2r)
    raise ValueError(f"unknown mode {mode!r}")
