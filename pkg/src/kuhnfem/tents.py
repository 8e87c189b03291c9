"""Hyperplane interpolants, tent functions and the primal-function catalog."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .triangulation import PathSimplex, TriangulationError, locate_many, simplices_leaving

__all__ = [
    "eval_H",
    "grad_H",
    "grad_dot",
    "local_basis",
    "eval_tent",
    "tent_at_origin",
    "PrimalKind",
    "PrimalFunction",
    "eval_primal",
    "catalog",
    "catalog_pairs",
]


def _check_index(i: int, d: int) -> None:
    if not 0 <= i <= d:
        raise TriangulationError(f"vertex index {i} out of range 0..{d}")


def _H_local(y: np.ndarray, perm: Sequence[int], i: int) -> np.ndarray:
    d = len(perm)
    if i == 0:
        return 1.0 - y[..., perm[0]]
    if i == d:
        return y[..., perm[d - 1]]
    return y[..., perm[i - 1]] - y[..., perm[i]]


def eval_H(T: PathSimplex, i: int, x) -> np.ndarray | float:
    """Affine interpolant of ``(T(j), [i == j])`` evaluated at ``x``."""
    _check_index(i, T.d)
    y = T.local(x)
    out = _H_local(y, T.perm, i)
    return float(out) if np.ndim(out) == 0 else out


def grad_H(T: PathSimplex, i: int) -> np.ndarray:
    _check_index(i, T.d)
    g = np.zeros(T.d)
    if i >= 1:
        g[T.perm[i - 1]] += 1.0
    if i <= T.d - 1:
        g[T.perm[i]] -= 1.0
    return g / T.r


def grad_dot(T_or_d, i: int, j: int, r: float | None = None) -> float:
    """Euclidean product of the gradients of ``H^i`` and ``H^j`` on one cell."""
    if isinstance(T_or_d, PathSimplex):
        d, r = T_or_d.d, T_or_d.r
    else:
        d = int(T_or_d)
        r = 1.0 if r is None else r
    _check_index(i, d)
    _check_index(j, d)
    if i == j:
        v = 1.0 if i in (0, d) else 2.0
    elif abs(i - j) == 1:
        v = -1.0
    else:
        v = 0.0
    return v / r ** 2


def local_basis(x, r: float) -> tuple[np.ndarray, np.ndarray]:
    """Vertices of the owning cells and the tent values there.

    For points ``x`` (n, d) returns ``(vertex_indices (n, d+1, d),
    values (n, d+1))``: ``values[:, i]`` is the value at ``x`` of the tent
    anchored at ``vertex_indices[:, i]``.  All other tents vanish at ``x``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    k, perms, y = locate_many(x, r)
    ys = np.take_along_axis(y, perms, axis=1)  # descending
    vals = np.empty((n, d + 1))
    vals[:, 0] = 1.0 - ys[:, 0]
    vals[:, 1:d] = ys[:, :-1] - ys[:, 1:]
    vals[:, d] = ys[:, -1]
    steps = np.zeros((n, d + 1, d), dtype=np.int64)
    rows = np.arange(n)
    for j in range(d):
        steps[:, j + 1] = steps[:, j]
        steps[rows, j + 1, perms[:, j]] += 1
    return k[:, None, :] + steps, vals


def eval_tent(alpha: Sequence[int], r: float, x) -> np.ndarray:
    """``chi_r^alpha(x)`` for ``x`` of shape (n, d) or (d,); ``alpha`` is a lattice index."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    verts, vals = local_basis(x.reshape(-1, len(alpha)), r)
    hit = np.all(verts == np.asarray(alpha, dtype=np.int64), axis=2)
    out = np.where(hit, vals, 0.0).sum(axis=1)
    return float(out[0]) if single else out


def tent_at_origin(y) -> np.ndarray:
    """The primal tent ``chi_1^0`` on unit scale."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return eval_tent(np.zeros(y.shape[1], dtype=np.int64), 1.0, y)


class PrimalKind(str, enum.Enum):
    UNIT_CUBE = "unit_cube"
    SHIFTED_CUBE = "shifted_cube"
    TENT = "tent"
    AXIS_AVERAGED = "axis_averaged"
    SIMPLEX_UNION = "simplex_union"


@dataclass(frozen=True)
class PrimalFunction:
    """A member of the fixed primal catalog on unit scale.

    ``axis`` (0-based) is used by the axis-averaged indicator and the simplex
    union only.
    """

    kind: PrimalKind
    d: int
    axis: int = 0

    @property
    def name(self) -> str:
        if self.kind in (PrimalKind.AXIS_AVERAGED, PrimalKind.SIMPLEX_UNION):
            return f"{self.kind.value}[{self.axis}]"
        return self.kind.value

    def __call__(self, y) -> np.ndarray:
        return eval_primal(self, y)

    def support_cubes(self) -> np.ndarray:
        """Unit cube anchors covering the support (a superset is fine)."""
        d = self.d
        if self.kind is PrimalKind.UNIT_CUBE:
            return np.zeros((1, d), dtype=np.int64)
        if self.kind is PrimalKind.SHIFTED_CUBE:
            return -np.ones((1, d), dtype=np.int64)
        if self.kind is PrimalKind.AXIS_AVERAGED:
            out = np.zeros((2, d), dtype=np.int64)
            out[1, self.axis] = 1
            return out
        grid = np.stack(np.meshgrid(*([np.array([-1, 0])] * d), indexing="ij"), axis=-1)
        return grid.reshape(-1, d).astype(np.int64)


def _in_unit(y: np.ndarray) -> np.ndarray:
    return (y >= 0.0) & (y < 1.0)


def eval_primal(p: PrimalFunction, y) -> np.ndarray:
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if p.kind is PrimalKind.UNIT_CUBE:
        return np.all(_in_unit(y), axis=1).astype(float)
    if p.kind is PrimalKind.SHIFTED_CUBE:
        return np.all(_in_unit(y + 1.0), axis=1).astype(float)
    if p.kind is PrimalKind.TENT:
        return tent_at_origin(y)
    if p.kind is PrimalKind.AXIS_AVERAGED:
        # int_0^1 1_[0,1)^d(y - t e_i) dt: a unit hat in y_i on [0, 2)
        others = np.delete(y, p.axis, axis=1)
        t = y[:, p.axis]
        hat = np.where((t >= 0) & (t < 1), t, np.where((t >= 1) & (t < 2), 2.0 - t, 0.0))
        return np.all(_in_unit(others), axis=1) * hat
    if p.kind is PrimalKind.SIMPLEX_UNION:
        k, perms, _ = locate_many(y, 1.0)
        d = y.shape[1]
        pos = np.argmax(perms == p.axis, axis=1)
        # vertex T(pos) of the owning cell must be the origin
        start = k.copy()
        for j in range(d):
            before = (j < pos)[:, None] & (np.arange(d)[None, :] == perms[:, j][:, None])
            start += before.astype(np.int64)
        return np.all(start == 0, axis=1).astype(float)
    raise ValueError(f"unknown primal kind {p.kind}")


def simplex_union_cells(d: int, axis: int) -> list[PathSimplex]:
    """The cells whose indicators make up the simplex-union primal function."""
    return simplices_leaving(np.zeros(d, dtype=np.int64), axis, 1.0)


def catalog(d: int) -> list[PrimalFunction]:
    out = [
        PrimalFunction(PrimalKind.UNIT_CUBE, d),
        PrimalFunction(PrimalKind.SHIFTED_CUBE, d),
        PrimalFunction(PrimalKind.TENT, d),
    ]
    out += [PrimalFunction(PrimalKind.AXIS_AVERAGED, d, i) for i in range(d)]
    out += [PrimalFunction(PrimalKind.SIMPLEX_UNION, d, i) for i in range(d)]
    return out


def catalog_pairs(d: int, names: Sequence[str] | None = None) -> list[tuple[PrimalFunction, PrimalFunction]]:
    """Ordered ``(phi, eta)`` pairs over the catalog, optionally filtered by ``"phi/eta"`` ids."""
    cat = catalog(d)
    pairs = [(a, b) for a in cat for b in cat]
    if names is not None:
        wanted = set(names)
        pairs = [pq for pq in pairs if pair_id(*pq) in wanted]
    return pairs


def pair_id(phi: PrimalFunction, eta: PrimalFunction) -> str:
    return f"{phi.name}/{eta.name}"
