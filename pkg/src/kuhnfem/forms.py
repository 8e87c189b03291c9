"""Galerkin matrices of the weighted gradient form on the tent basis."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .densities import cell_masses
from .quadrature import kuhn_cell_rule
from .tents import grad_dot
from .triangulation import GridSpec, all_perms

__all__ = [
    "FormError",
    "FormMatrices",
    "assemble",
    "ResolventSolver",
    "resolvent",
    "semigroup",
    "semigroup_exact",
    "energy",
    "l2_inner",
    "markov_check",
    "MarkovReport",
    "generalized_eigs",
    "export_matrix_market",
    "write_nodal_csv",
]

MASS_FLOOR = 1e-300


class FormError(RuntimeError):
    pass


@dataclass(frozen=True)
class FormMatrices:
    """Stiffness ``S`` and mass ``M`` (CSR) on the retained nodes of ``grid``.

    ``nodes[i]`` is the lattice multi-index of row ``i``; rows follow C order
    of the grid node box.
    """

    S: sp.csr_matrix
    M: sp.csr_matrix
    nodes: np.ndarray
    grid: GridSpec
    cell_mass: np.ndarray
    lumped: bool = False

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def coords(self) -> np.ndarray:
        return self.grid.r * self.nodes.astype(float)

    def interpolate(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Nodal values ``fn(r * alpha)``."""
        return np.asarray(fn(self.coords), dtype=float).reshape(self.n)

    def ones(self) -> np.ndarray:
        return np.ones(self.n)


def _local_basis_at_rule(d: int, order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quadrature points (d!, q, d), weights (q,), and ``H^i`` values there (d!, q, d+1)."""
    P, W = kuhn_cell_rule(d, order)
    perms = np.asarray(all_perms(d))
    ys = np.take_along_axis(P, np.broadcast_to(perms[:, None, :], P.shape), axis=2)  # descending per cell
    H = np.empty(P.shape[:2] + (d + 1,))
    H[..., 0] = 1.0 - ys[..., 0]
    H[..., 1:d] = ys[..., :-1] - ys[..., 1:]
    H[..., d] = ys[..., -1]
    return P, W, H


def _vertex_offsets(d: int) -> np.ndarray:
    """Integer offsets ``T(j) - T(0)`` for every permutation, shape (d!, d+1, d)."""
    perms = all_perms(d)
    out = np.zeros((len(perms), d + 1, d), dtype=np.int64)
    for s, p in enumerate(perms):
        for j, axis in enumerate(p):
            out[s, j + 1] = out[s, j]
            out[s, j + 1, axis] += 1
    return out


def assemble(grid: GridSpec, rho, order: int = 6, lump: bool = False) -> FormMatrices:
    """Assemble ``S_ab = sum_T grad_dot(T, i_a, i_b) int_{D_T} rho`` and the consistent mass.

    Cells whose density mass is below ``1e-300`` are dropped; the node set is
    the union of vertices of retained cells.  No boundary condition is
    imposed on the box.
    """
    d, r = grid.d, grid.r
    mass = cell_masses(rho, grid, order)  # (n_cubes, d!)
    anchors = grid.cube_anchors()
    keep = mass > MASS_FLOOR
    cube_id, perm_id = np.nonzero(keep)
    mT = mass[cube_id, perm_id]

    # global vertex numbers in the node box
    offs = _vertex_offsets(d)
    verts = anchors[cube_id][:, None, :] + offs[perm_id]  # (nc, d+1, d)
    rel = verts - np.asarray(grid.lo)
    flat = np.ravel_multi_index(tuple(np.moveaxis(rel, -1, 0)), grid.node_shape)  # (nc, d+1)

    K = np.array([[grad_dot(d, i, j, r) for j in range(d + 1)] for i in range(d + 1)])
    # per-cell mass: r^d sum_q W_q rho(x_q) H_i H_j
    P, W, H = _local_basis_at_rule(d, order)
    ML = np.empty((len(mT), d + 1, d + 1))
    step = 100_000
    for s in range(0, len(mT), step):
        sl = slice(s, s + step)
        pts = r * (anchors[cube_id[sl]][:, None, :] + P[perm_id[sl]])
        rv = np.asarray(rho(pts.reshape(-1, d)), dtype=float).reshape(pts.shape[:2])
        Hs = H[perm_id[sl]]
        ML[sl] = np.einsum("cq,q,cqi,cqj->cij", rv, W, Hs, Hs) * r ** d

    rows = np.repeat(flat, d + 1, axis=1).reshape(-1)
    cols = np.tile(flat, (1, d + 1)).reshape(-1)
    svals = (mT[:, None, None] * K[None]).reshape(-1)
    used = np.unique(flat)
    remap = np.full(int(np.prod(grid.node_shape)), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    n = len(used)
    S = sp.coo_matrix((svals, (remap[rows], remap[cols])), shape=(n, n)).tocsr()
    M = sp.coo_matrix((ML.reshape(-1), (remap[rows], remap[cols])), shape=(n, n)).tocsr()
    S = ((S + S.T) * 0.5).tocsr()
    M = ((M + M.T) * 0.5).tocsr()
    if lump:
        M = sp.diags(np.asarray(M.sum(axis=1)).reshape(-1)).tocsr()
    S.sort_indices()
    M.sort_indices()
    nodes = np.stack(np.unravel_index(used, grid.node_shape), axis=-1) + np.asarray(grid.lo)
    cm = np.zeros_like(mass)
    cm[keep] = mT
    return FormMatrices(S, M, nodes.astype(np.int64), grid, cm, lump)


def energy(F: FormMatrices, u, v=None) -> float:
    v = u if v is None else v
    return float(np.asarray(u) @ (F.S @ np.asarray(v)))


def l2_inner(F: FormMatrices, u, v=None) -> float:
    v = u if v is None else v
    return float(np.asarray(u) @ (F.M @ np.asarray(v)))


class ResolventSolver:
    """Factorised ``(a M + b S)`` with residual checks on every solve."""

    def __init__(self, F: FormMatrices, a: float, b: float = 1.0, rtol: float = 1e-10):
        self.F, self.rtol = F, rtol
        A = (a * F.M + b * F.S).tocsc()
        diag = A.diagonal()
        if np.any(diag <= 0):
            raise FormError(f"operator has non-positive diagonal entries (min {diag.min():.3e})")
        self.A = A
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:  # exactly singular
            raise FormError(f"factorisation failed: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        u = self._lu.solve(np.asarray(b, dtype=float))
        if not np.all(np.isfinite(u)):
            raise FormError("solve produced non-finite values")
        res = np.linalg.norm(self.A @ u - b)
        scale = max(np.linalg.norm(b), 1e-300)
        if res > self.rtol * scale:
            inv = spla.LinearOperator(self.A.shape, matvec=self._lu.solve, rmatvec=lambda v: self._lu.solve(v, trans="T"),
                                      dtype=float)
            cond = spla.onenormest(self.A) * spla.onenormest(inv)
            raise FormError(f"relative residual {res / scale:.3e} exceeds {self.rtol:.1e}; condition ~ {cond:.3e}")
        return u


def resolvent(F: FormMatrices, alpha: float, f, solver: ResolventSolver | None = None) -> np.ndarray:
    """``G_alpha f``: solve ``(alpha M + S) u = M f``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    solver = solver or ResolventSolver(F, alpha)
    return solver.solve(F.M @ np.asarray(f, dtype=float))


def _euler(F: FormMatrices, t: float, f, n: int) -> np.ndarray:
    solver = ResolventSolver(F, 1.0, t / n)
    u = np.asarray(f, dtype=float)
    for _ in range(n):
        u = solver.solve(F.M @ u)
    return u


def semigroup(F: FormMatrices, t: float, f, n: int = 64, richardson: bool = False):
    """``T_t f`` by ``n`` implicit Euler steps ``(M + (t/n) S) u_{k+1} = M u_k``.

    With ``richardson=True`` returns ``(u_2n, err)`` where ``err`` is the
    ``M``-norm distance between the ``n`` and ``2n`` step results.
    """
    if not t > 0 or n < 1:
        raise ValueError("need t > 0 and n >= 1")
    u = _euler(F, t, f, n)
    if not richardson:
        return u
    u2 = _euler(F, t, f, 2 * n)
    diff = u2 - u
    return u2, math.sqrt(max(l2_inner(F, diff), 0.0))


def generalized_eigs(F: FormMatrices, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``S v = lam M v`` eigenpairs (ascending), ``M``-orthonormal vectors."""
    lam, V = scipy.linalg.eigh(F.S.toarray(), F.M.toarray())
    if k is not None:
        lam, V = lam[:k], V[:, :k]
    return lam, V


def semigroup_exact(F: FormMatrices, t: float, f) -> np.ndarray:
    """``exp(-t M^-1 S) f`` through the dense generalized eigendecomposition."""
    lam, V = generalized_eigs(F)
    c = V.T @ (F.M @ np.asarray(f, dtype=float))
    return V @ (np.exp(-t * np.maximum(lam, 0.0)) * c)


@dataclass
class MarkovReport:
    ok: bool
    trials: int
    violations: int
    min_value: float
    max_value: float
    offending: np.ndarray | None = None


def markov_check(F: FormMatrices, alpha: float, trials: int = 1000, seed: int = 0, tol: float = 1e-9) -> MarkovReport:
    """Check ``-tol <= alpha G_alpha f <= 1 + tol`` for random ``f`` in ``[0, 1]^n``.

    Half of the inputs are uniform, half are random 0/1 patterns, which
    stress the order interval hardest.
    """
    rng = np.random.default_rng(seed)
    solver = ResolventSolver(F, alpha)
    lo, hi, bad, first = math.inf, -math.inf, 0, None
    batch = 64
    for s in range(0, trials, batch):
        m = min(batch, trials - s)
        fs = rng.random((F.n, m))
        fs[:, m // 2:] = np.round(fs[:, m // 2:])
        U = alpha * np.column_stack([solver.solve(F.M @ fs[:, j]) for j in range(m)])
        lo = min(lo, float(U.min()))
        hi = max(hi, float(U.max()))
        viol = (U.min(axis=0) < -tol) | (U.max(axis=0) > 1 + tol)
        bad += int(viol.sum())
        if first is None and np.any(viol):
            first = fs[:, int(np.argmax(viol))].copy()
    return MarkovReport(bad == 0, trials, bad, lo, hi, first)


def export_matrix_market(F: FormMatrices, directory, comment: str = "") -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ps, pm = directory / "stiffness.mtx", directory / "mass.mtx"
    scipy.io.mmwrite(str(ps), F.S.tocoo(), comment=comment, symmetry="symmetric")
    scipy.io.mmwrite(str(pm), F.M.tocoo(), comment=comment, symmetry="symmetric")
    return ps, pm


def write_nodal_csv(path, F: FormMatrices, values: np.ndarray, header_comment: str, value_name: str = "value") -> Path:
    """CSV of ``(node, x_1..x_d, value)`` with a leading comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["node"] + [f"x{k + 1} [length]" for k in range(F.grid.d)] + [value_name])
        for i, (c, v) in enumerate(zip(F.coords, values)):
            w.writerow([i] + [repr(float(x)) for x in c] + [repr(float(v))])
    return path
