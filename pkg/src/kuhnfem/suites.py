"""Invariant suites for the triangulation, the tent basis and weighted tent sums.

Every check returns a :class:`Check` record so the CLI and the tests can
report the measured value next to its tolerance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .densities import GaussianDensity
from .functionals import C_estimate, delta_estimate, modulus
from .plspace import TentCoefficients, cell_gradients, eval_sum, grad_sq_norm, local_average_project
from .quadrature import kuhn_cell_rule
from .seeding import task_rng
from .tents import catalog, eval_H, eval_primal, local_basis
from .triangulation import GridSpec, PathSimplex, all_perms, locate, locate_many, membership, perm_from_vertices, perm_to_path

__all__ = [
    "Check",
    "freudenthal_hat",
    "basis_suite",
    "partition_of_unity",
    "tent_mass",
    "cell_volume_mc",
    "weak_gradient_identity",
    "fd_gradient",
    "SampleTriple",
    "default_triples",
    "approximation_bounds",
]


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tol: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "value": float(self.value), "tol": float(self.tol),
                "detail": self.detail}


def freudenthal_hat(y) -> np.ndarray:
    """Closed form ``max(0, 1 - max_i y_i^+ - max_i y_i^-)`` of the unit tent at the origin.

    Used as an independent oracle for the locate-based evaluation.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    pos = np.max(np.maximum(y, 0.0), axis=1)
    neg = np.max(np.maximum(-y, 0.0), axis=1)
    return np.maximum(0.0, 1.0 - pos - neg)


def _box_points(rng, grid: GridSpec, n: int) -> np.ndarray:
    return grid.lower + rng.random((n, grid.d)) * (grid.upper - grid.lower)


def partition_of_unity(grid: GridSpec, samples: int, rng) -> tuple[Check, Check]:
    """Sum of tent values and agreement with the closed-form tent at every supporting node."""
    X = _box_points(rng, grid, samples)
    verts, vals = local_basis(X, grid.r)
    err = float(np.max(np.abs(vals.sum(axis=1) - 1.0)))
    oracle = freudenthal_hat((X[:, None, :] / grid.r - verts).reshape(-1, grid.d)).reshape(vals.shape)
    err_hat = float(np.max(np.abs(oracle - vals)))
    return (Check("partition_of_unity", err <= 1e-12, err, 1e-12),
            Check("tent_closed_form", err_hat <= 1e-12, err_hat, 1e-12))


def tent_mass(d: int, r: float, alpha: Sequence[int] | None = None, order: int = 3) -> float:
    """``int chi_r^alpha dx`` by Kuhn-cell quadrature over the ``2^d`` cubes around ``alpha``."""
    alpha = np.zeros(d, dtype=np.int64) if alpha is None else np.asarray(alpha, dtype=np.int64)
    P, W = kuhn_cell_rule(d, order)
    corners = np.stack(np.meshgrid(*([np.array([-1, 0])] * d), indexing="ij"), axis=-1).reshape(-1, d)
    total = 0.0
    for c in corners:
        pts = r * ((alpha + c)[None, None, :] + P).reshape(-1, d)
        rel = pts / r - alpha
        total += float(freudenthal_hat(rel) @ np.tile(W, P.shape[0])) * r ** d
    return total


def cell_volume_mc(d: int, r: float, samples: int, rng, perm: Sequence[int] | None = None) -> tuple[float, float]:
    """Fraction of uniform points of one cube owned by cell ``perm``, and its binomial deviation in sigmas."""
    perm = tuple(range(d)) if perm is None else tuple(perm)
    X = r * rng.random((samples, d))
    _, perms, _ = locate_many(X, r)
    hits = int(np.count_nonzero(np.all(perms == np.asarray(perm), axis=1)))
    p = 1.0 / math.factorial(d)
    sd = math.sqrt(samples * p * (1 - p)) if d > 1 else 1.0
    frac = hits / samples
    return frac * r ** d, abs(hits - samples * p) / sd


def weak_gradient_identity(grid: GridSpec, trials: int, rng) -> float:
    """Worst relative gap between the per-cell squared-gradient formula and ``|grad|^2``."""
    worst = 0.0
    for _ in range(trials):
        c = TentCoefficients.from_dense(grid, rng.standard_normal(grid.node_shape))
        anchors, perms, grads = cell_gradients(c)
        sq = grad_sq_norm(c, anchors=anchors, perms=perms)
        ref = np.sum(grads * grads, axis=1)
        worst = max(worst, float(np.max(np.abs(sq - ref) / np.maximum(1.0, np.abs(ref)))))
    return worst


def _interior_points(rng, grid: GridSpec, n: int, gap: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random points whose sorted local coordinates are ``gap``-separated from each other and the cube faces."""
    d = grid.d
    anchors = grid.cube_anchors()[rng.integers(0, len(grid.cube_anchors()), n)]
    perms = np.stack([rng.permutation(d) for _ in range(n)])
    # descending chain 1 - gap > y_1 > ... > y_d > gap with spacing >= gap
    free = 1.0 - (d + 1) * gap
    cuts = np.sort(rng.random((n, d)) * free, axis=1)[:, ::-1]
    ys = cuts + gap * np.arange(d, 0, -1)[None, :]
    local = np.empty_like(ys)
    np.put_along_axis(local, perms, ys, axis=1)
    return grid.r * (anchors + local), anchors, perms


def fd_gradient(grid: GridSpec, points: int, rng, h_rel: float = 1e-6) -> float:
    """Max gap between central differences of ``eval_sum`` and the cell gradient at interior points."""
    c = TentCoefficients.from_dense(grid, rng.random(grid.node_shape))
    X, anchors, perms = _interior_points(rng, grid, points, gap=1e-3)
    _, _, grads = cell_gradients(c, anchors, perms)
    h = h_rel * grid.r
    fd = np.empty_like(X)
    for j in range(grid.d):
        e = np.zeros(grid.d)
        e[j] = h
        fd[:, j] = (eval_sum(c, X + e) - eval_sum(c, X - e)) / (2 * h)
    return float(np.max(np.abs(fd - grads)))


def _lipschitz(grid: GridSpec, pairs: int, rng) -> float:
    """Max of ``|u(x) - u(y)| / ((sqrt 2 span / r) d max_j |x_j - y_j|)``; must not exceed 1."""
    c = TentCoefficients.from_dense(grid, rng.random(grid.node_shape))
    span = float(c.dense.max() - c.dense.min())
    X = _box_points(rng, grid, pairs)
    Y = np.clip(X + grid.r * (rng.random(X.shape) - 0.5), grid.lower, grid.upper)
    lhs = np.abs(eval_sum(c, X) - eval_sum(c, Y))
    rhs = math.sqrt(2.0) * span / grid.r * grid.d * np.max(np.abs(X - Y), axis=1)
    ok = rhs > 0
    return float(np.max(lhs[ok] / rhs[ok])) if np.any(ok) else 0.0


def _face_continuity(grid: GridSpec, n: int, rng) -> float:
    """Shared-vertex values from the two cells meeting at random interior face points."""
    d = grid.d
    if d < 2:
        return 0.0
    worst = 0.0
    X, anchors, perms = _interior_points(rng, grid, n, gap=1e-2)
    for x, a, p in zip(X, anchors, perms):
        j = int(rng.integers(0, d - 1))
        # move x onto the face y[p_j] == y[p_{j+1}] shared with the swapped path
        y = x / grid.r - a
        y[p[j]] = y[p[j + 1]] = 0.5 * (y[p[j]] + y[p[j + 1]])
        x = grid.r * (a + y)
        q = p.copy()
        q[j], q[j + 1] = q[j + 1], q[j]
        T1 = PathSimplex(tuple(a), tuple(int(v) for v in p), grid.r)
        T2 = PathSimplex(tuple(a), tuple(int(v) for v in q), grid.r)
        v1 = {tuple(v): eval_H(T1, i, x) for i, v in enumerate(T1.vertex_indices())}
        v2 = {tuple(v): eval_H(T2, i, x) for i, v in enumerate(T2.vertex_indices())}
        for key in set(v1) | set(v2):
            worst = max(worst, abs(v1.get(key, 0.0) - v2.get(key, 0.0)))
    return worst


def _catalog_axioms(d: int, rng, samples: int = 4000) -> float:
    """Worst violation of support, range, unit integral and shift-sum for the primal catalog."""
    P, W = kuhn_cell_rule(d, 3)
    Wf = np.tile(W, P.shape[0])
    shifts = np.stack(np.meshgrid(*([np.arange(-2, 3)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    worst = 0.0
    Y = rng.random((samples, d))
    far = 2.0 + rng.random((samples, d)) * 2.0
    far *= np.where(rng.random((samples, d)) < 0.5, -1.0, 1.0)
    for p in catalog(d):
        integral = sum(float(eval_primal(p, (c + P).reshape(-1, d)) @ Wf) for c in p.support_cubes())
        worst = max(worst, abs(integral - 1.0))
        shift_sum = sum(eval_primal(p, Y - s) for s in shifts)
        worst = max(worst, float(np.max(np.abs(shift_sum - 1.0))))
        vals = eval_primal(p, 4.0 * (rng.random((samples, d)) - 0.5))
        worst = max(worst, float(np.max(np.maximum(vals - 1.0, 0.0) + np.maximum(-vals, 0.0))))
        worst = max(worst, float(np.max(np.abs(eval_primal(p, far)))))
    return worst


def basis_suite(d: int, r: float, seed: int, samples: int = 100_000, volume_samples: int = 200_000,
                half_width: float = 2.0) -> list[Check]:
    """Triangulation, tent and tent-sum invariants on the box ``[-half_width, half_width]^d``."""
    grid = GridSpec.symmetric(d, r, half_width)
    rng = lambda name: task_rng(seed, f"basis/d={d}/r={r!r}/{name}")  # noqa: E731
    checks: list[Check] = []
    checks.extend(partition_of_unity(grid, samples, rng("pou")))

    # locate is unique: the owning cell contains x and its anchor siblings do not
    g = rng("locate")
    X = _box_points(g, grid, min(samples, 400 if d >= 4 else 1500))
    bad = 0
    for x in X:
        T = locate(x, r)
        if not membership(x, T):
            bad += 1
        for p in all_perms(d):
            if p != T.perm and membership(x, PathSimplex(T.anchor, p, r)):
                bad += 1
    checks.append(Check("locate_unique", bad == 0, bad, 0))

    perms = all_perms(d) if d <= 6 else []
    mism = sum(perm_from_vertices(perm_to_path(p, (0,) * d, r).vertices(), r) != p for p in perms)
    checks.append(Check("perm_bijection", mism == 0, mism, 0, f"{len(perms)} permutations"))

    g = rng("translate")
    X = _box_points(g, grid, 2000)
    Z = g.integers(-5, 6, X.shape)
    k1, p1, _ = locate_many(X, r)
    k2, p2, _ = locate_many(X + r * Z, r)
    moved = int(np.count_nonzero(np.any(k2 != k1 + Z, axis=1) | np.any(p2 != p1, axis=1)))
    checks.append(Check("translation_equivariance", moved == 0, moved, 0))

    vol, nsig = cell_volume_mc(d, r, volume_samples, rng("volume"))
    checks.append(Check("cell_volume_sigmas", nsig <= 3.0, nsig, 3.0, f"volume {vol:.6g} vs {r ** d / math.factorial(d):.6g}"))

    m = tent_mass(d, r)
    rel = abs(m - r ** d) / r ** d
    checks.append(Check("tent_mass", rel <= 1e-10, rel, 1e-10))

    cont = _face_continuity(grid, 200, rng("faces"))
    checks.append(Check("face_continuity", cont <= 1e-12, cont, 1e-12))

    ax = _catalog_axioms(d, rng("catalog"))
    checks.append(Check("catalog_axioms", ax <= 1e-12, ax, 1e-12))

    small = GridSpec.symmetric(d, r, min(half_width, 4 * r))
    wg = weak_gradient_identity(small, 20, rng("weak"))
    checks.append(Check("weak_gradient_identity", wg <= 1e-14, wg, 1e-14))
    fd = fd_gradient(small, 200, rng("fd"))
    checks.append(Check("fd_gradient", fd <= 1e-5, fd, 1e-5))
    lip = _lipschitz(small, 2000, rng("lipschitz"))
    checks.append(Check("lipschitz_ratio", lip <= 1.0 + 1e-12, lip, 1.0))
    return checks


# ---------------------------------------------------------------- approximation bounds


@dataclass(frozen=True)
class SampleTriple:
    """``u`` (values in [-1, 1]) with its gradient, a compactly supported ``g`` and ``f`` on a finite ``S``."""

    name: str
    u: Callable[[np.ndarray, int], np.ndarray]
    u_grad: Callable[[np.ndarray, int], np.ndarray]
    g_width: float
    f: tuple[float, ...]


def _bump(t: np.ndarray, w: float) -> tuple[np.ndarray, np.ndarray]:
    """``cos^2(pi t / 2w)`` on ``|t| < w``, zero outside (a C^1 bump) and its derivative."""
    inside = np.abs(t) < w
    a = np.pi * t / (2 * w)
    val = np.where(inside, np.cos(a) ** 2, 0.0)
    der = np.where(inside, -np.sin(2 * a) * np.pi / (2 * w), 0.0)
    return val, der


def _g(width: float):
    def g(x):
        x = np.atleast_2d(x)
        return np.prod(_bump(x, width)[0], axis=1)

    def grad(x):
        x = np.atleast_2d(x)
        v, dv = _bump(x, width)
        out = np.empty_like(x)
        for j in range(x.shape[1]):
            out[:, j] = dv[:, j] * np.prod(np.delete(v, j, axis=1), axis=1)
        return out

    return g, grad


def default_triples() -> list[SampleTriple]:
    def u1(x, s):
        return 0.9 * np.sin(np.sum(x * (1.0 + 0.5 * np.arange(x.shape[1])), axis=1) + 0.7 * s)

    def u1g(x, s):
        a = 1.0 + 0.5 * np.arange(x.shape[1])
        return 0.9 * np.cos(np.sum(x * a, axis=1) + 0.7 * s)[:, None] * a[None]

    def u2(x, s):
        return np.prod(np.tanh(2.0 * x - 0.3 * s), axis=1)

    def u2g(x, s):
        t = np.tanh(2.0 * x - 0.3 * s)
        dt = 2.0 * (1.0 - t * t)
        out = np.empty_like(x)
        for j in range(x.shape[1]):
            out[:, j] = dt[:, j] * np.prod(np.delete(t, j, axis=1), axis=1)
        return out

    def u3(x, s):
        return np.cos(1.5 * np.sum(x * x, axis=1) + s)

    def u3g(x, s):
        return -np.sin(1.5 * np.sum(x * x, axis=1) + s)[:, None] * 3.0 * x

    return [
        SampleTriple("sine_wave", u1, u1g, 1.0, (1.0, -0.5)),
        SampleTriple("tanh_product", u2, u2g, 1.5, (0.3, 1.0)),
        SampleTriple("radial_cosine", u3, u3g, 2.0, (-1.0, -1.0)),
    ]


def _cutoff(L: float):
    def kappa(x):
        x = np.atleast_2d(x)
        return np.clip(L - np.max(np.abs(x), axis=1), 0.0, 1.0)

    return kappa


def _cell_quadrature(grid: GridSpec, order: int):
    """All Kuhn cells of ``grid``: points (nc, q, d), weights (q,), anchors and perms."""
    d = grid.d
    P, W = kuhn_cell_rule(d, order)
    perms = np.asarray(all_perms(d), dtype=np.int64)
    anchors = grid.cube_anchors()
    A = np.repeat(anchors, len(perms), axis=0)
    pid = np.tile(np.arange(len(perms)), len(anchors))
    pts = grid.r * (A[:, None, :] + P[pid])
    return pts, W * grid.r ** d, A, perms[pid]


def approximation_bounds(d: int, r: float, triples: Sequence[SampleTriple] | None = None,
                         means: Sequence[float] = (-0.4, 0.5), nu: Sequence[float] = (0.4, 0.6),
                         cutoff: float = 2.0, order: int | None = None) -> list[dict]:
    """Left and right sides of the three approximation inequalities for each sample triple.

    ``S`` is the two-point set carrying weights ``nu``; ``m_s`` is the unit
    Gaussian centred at ``means[s] * (1, ..., 1)``; ``kappa`` is the Lipschitz
    cutoff ``clip(L - |x|_inf, 0, 1)``.  The approximant is the cube-mean
    projection of ``u(s, .)``.  The right sides use the catalog ``delta`` and
    ``C`` estimates and the measured moduli of ``g``.
    """
    triples = list(triples or default_triples())
    order = order or (6 if d == 1 else 4)
    kappa = _cutoff(cutoff)
    nu = np.asarray(nu, dtype=float)
    rhos = [GaussianDensity(np.full(d, m), np.ones(d)) for m in means]
    # the weighted residual vanishes a few cells beyond the cutoff support
    local = GridSpec.symmetric(d, r, cutoff + 2 * r)
    deltas = np.array([delta_estimate(rho, kappa, r, grid=local).value for rho in rhos])
    Cs = np.array([C_estimate(rho, kappa, r, grid=local).value for rho in rhos])
    delta_nu = math.sqrt(float(nu @ deltas ** 2))
    C_inf = float(Cs.max())

    inner = GridSpec.symmetric(d, r, cutoff)
    pts, W, A, perms = _cell_quadrature(inner, order)
    X = pts.reshape(-1, d)
    full_pts = []
    for rho in rhos:
        # the u-energy runs over the whole (truncated) support of m_s
        box = GridSpec.from_bounds(r, np.floor(rho.lower / r) * r, np.ceil(rho.upper / r) * r)
        fp, fW, _, _ = _cell_quadrature(box, order)
        full_pts.append((fp.reshape(-1, d), np.tile(fW, fp.shape[0]), rho(fp.reshape(-1, d))))
    kr = [kappa(X) * rho(X) for rho in rhos]
    Wf = np.tile(W, pts.shape[0])
    q = pts.shape[1]

    out = []
    for tr in triples:
        g, g_grad = _g(tr.g_width)
        f = np.asarray(tr.f, dtype=float)
        f_inf = float(np.max(np.abs(f[nu > 0])))
        lo, hi = -np.full(d, tr.g_width), np.full(d, tr.g_width)
        om = modulus(g, r, lo, hi, grad=g_grad)
        g_sup = 1.0
        om_grad = max(modulus(lambda x, j=j: g_grad(x)[:, j], r, lo, hi).omega for j in range(d))
        lhs2 = lhs3 = lhs4 = 0.0
        energy_u = 0.0
        for s, rho in enumerate(rhos):
            us = lambda x, s=s: tr.u(np.atleast_2d(x), s)  # noqa: E731
            lam = local_average_project(us, inner, order=6)
            diff = us(X) - eval_sum(lam, X)
            lhs2 += nu[s] * f[s] * float((g(X) * diff * kr[s]) @ Wf)
            _, _, glam = cell_gradients(lam, A, perms)
            gu = tr.u_grad(X, s)
            gl = np.repeat(glam, q, axis=0)
            lhs3 += nu[s] * f[s] * float((np.sum(g_grad(X) * (gu - gl), axis=1) * kr[s]) @ Wf)
            lhs4 += nu[s] * float((np.sum(gl * gl, axis=1) * kr[s]) @ Wf)
            fx, fw, frho = full_pts[s]
            energy_u += nu[s] * float((np.sum(tr.u_grad(fx, s) ** 2, axis=1) * frho) @ fw)
        rhs2 = f_inf * (om.omega + g_sup * delta_nu)
        rhs3 = math.sqrt(d) * f_inf * (om_grad + om.D * delta_nu) * math.sqrt(energy_u)
        rhs4 = C_inf * energy_u
        out.append({
            "triple": tr.name, "d": d, "r": r,
            "lhs_ii": abs(float(lhs2)), "rhs_ii": float(rhs2),
            "lhs_iii": abs(float(lhs3)), "rhs_iii": float(rhs3),
            "lhs_iv": float(lhs4), "rhs_iv": float(rhs4),
            "delta_L2nu": delta_nu, "C_Linf": C_inf, "omega_g": om.omega, "omega_grad_g": om_grad, "D_g": om.D,
        })
    return out
