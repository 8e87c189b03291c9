"""Weighted tent sums on a lattice box: evaluation, weak gradients, projection."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .quadrature import agree, cube_rule, flag_disagreement
from .tents import local_basis
from .triangulation import GridSpec, PathSimplex, all_perms

__all__ = [
    "TentCoefficients",
    "eval_sum",
    "weak_gradient",
    "cell_gradients",
    "grad_sq_norm",
    "local_average_project",
    "clip_coefficients",
]


@dataclass(frozen=True)
class TentCoefficients:
    """Sparse nodal weights ``w_alpha`` on the closed lattice box of ``grid``.

    Unstored indices carry weight 0.  ``dense`` mirrors the map as an array
    over ``grid.node_shape`` for vectorised lookups.
    """

    grid: GridSpec
    weights: Mapping[tuple[int, ...], float]
    dense: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        g = self.grid
        arr = np.zeros(g.node_shape)
        clean = {}
        for key, w in self.weights.items():
            k = tuple(int(v) for v in key)
            if not g.contains_index(k):
                raise ValueError(f"index {k} lies outside the grid box")
            w = float(w)
            if w != 0.0:
                clean[k] = w
                arr[tuple(np.subtract(k, g.lo))] = w
        arr.setflags(write=False)
        object.__setattr__(self, "weights", clean)
        object.__setattr__(self, "dense", arr)

    @classmethod
    def from_dense(cls, grid: GridSpec, values: np.ndarray) -> "TentCoefficients":
        values = np.asarray(values, dtype=float).reshape(grid.node_shape)
        nodes = grid.nodes()
        flat = values.reshape(-1)
        nz = np.flatnonzero(flat)
        return cls(grid, {tuple(int(v) for v in nodes[i]): flat[i] for i in nz})

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable[[np.ndarray], np.ndarray]) -> "TentCoefficients":
        """Nodal interpolation: ``w_alpha = fn(r * alpha)``."""
        nodes = grid.nodes()
        return cls.from_dense(grid, np.asarray(fn(grid.r * nodes.astype(float)), dtype=float))

    @property
    def bound(self) -> float:
        return float(np.max(np.abs(self.dense))) if self.dense.size else 0.0

    def lookup(self, idx) -> np.ndarray:
        """Weights at integer indices ``idx`` (..., d); zero outside the box."""
        idx = np.asarray(idx, dtype=np.int64)
        rel = idx - np.asarray(self.grid.lo, dtype=np.int64)
        shape = np.asarray(self.grid.node_shape, dtype=np.int64)
        inside = np.all((rel >= 0) & (rel < shape), axis=-1)
        rel = np.where(inside[..., None], rel, 0)
        out = self.dense[tuple(np.moveaxis(rel, -1, 0))]
        return np.where(inside, out, 0.0)

    def to_dict(self) -> dict:
        g = self.grid
        return {
            "d": g.d,
            "r": g.r,
            "box": [list(g.lo), list(g.hi)],
            "entries": [{"index": list(k), "w": w} for k, w in sorted(self.weights.items())],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TentCoefficients":
        d = int(doc["d"])
        lo, hi = doc["box"]
        grid = GridSpec(d, float(doc["r"]), tuple(lo), tuple(hi))
        return cls(grid, {tuple(e["index"]): float(e["w"]) for e in doc["entries"]})

    @classmethod
    def from_json(cls, text: str) -> "TentCoefficients":
        return cls.from_dict(json.loads(text))


def eval_sum(c: TentCoefficients, x) -> np.ndarray:
    """``sum_alpha w_alpha chi_r^alpha(x)`` for points of shape (n, d) or (d,)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    verts, vals = local_basis(x.reshape(-1, c.grid.d), c.grid.r)
    out = np.sum(vals * c.lookup(verts), axis=1)
    return float(out[0]) if single else out


def _path_differences(c: TentCoefficients, anchors: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """``w_{T(j+1)} - w_{T(j)}`` for each cell, shape (n, d)."""
    n, d = anchors.shape
    v = anchors.astype(np.int64).copy()
    rows = np.arange(n)
    w_prev = c.lookup(v)
    diffs = np.empty((n, d))
    for j in range(d):
        v[rows, perms[:, j]] += 1
        w_next = c.lookup(v)
        diffs[:, j] = w_next - w_prev
        w_prev = w_next
    return diffs


def _box_cells(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    anchors = grid.cube_anchors()
    perms = np.asarray(all_perms(grid.d), dtype=np.int64)
    na, npm = len(anchors), len(perms)
    return np.repeat(anchors, npm, axis=0), np.tile(perms, (na, 1))


def cell_gradients(c: TentCoefficients, anchors=None, perms=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Constant gradients on cells, vectorised.

    Defaults to every cell of the grid box.  Returns ``(anchors, perms,
    gradients)`` with gradients of shape (n, d).
    """
    if anchors is None:
        anchors, perms = _box_cells(c.grid)
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.int64))
    perms = np.atleast_2d(np.asarray(perms, dtype=np.int64))
    diffs = _path_differences(c, anchors, perms) / c.grid.r
    grads = np.empty_like(diffs)
    # step j of the path moves along axis perms[j]
    np.put_along_axis(grads, perms, diffs, axis=1)
    return anchors, perms, grads


def weak_gradient(c: TentCoefficients) -> dict[tuple, np.ndarray]:
    """Map from cell key ``(anchor, perm)`` to the constant gradient on that cell."""
    anchors, perms, grads = cell_gradients(c)
    return {
        (tuple(int(v) for v in a), tuple(int(v) for v in p)): g
        for a, p, g in zip(anchors, perms, grads)
    }


def grad_sq_norm(c: TentCoefficients, T: PathSimplex | None = None, anchors=None, perms=None):
    """``r^-2 sum_i (w_{T(i)} - w_{T(i-1)})^2`` for one cell or a batch of cells."""
    if T is not None:
        diffs = _path_differences(c, np.asarray([T.anchor]), np.asarray([T.perm]))
        return float(np.sum(diffs[0] ** 2) / T.r ** 2)
    if anchors is None:
        anchors, perms = _box_cells(c.grid)
    diffs = _path_differences(c, np.atleast_2d(anchors), np.atleast_2d(perms))
    return np.sum(diffs ** 2, axis=1) / c.grid.r ** 2


def _cube_averages(u, anchors: np.ndarray, r: float, order: int, split: int) -> np.ndarray:
    d = anchors.shape[1]
    X, W = cube_rule(d, order)
    if split > 1:
        sub = np.stack(np.meshgrid(*([np.arange(split)] * d), indexing="ij"), axis=-1).reshape(-1, d)
        X = ((sub[:, None, :] + X[None]) / split).reshape(-1, d)
        W = np.tile(W, len(sub)) / len(sub)
    out = np.empty(len(anchors))
    chunk = max(1, 200_000 // len(X))
    for s in range(0, len(anchors), chunk):
        a = anchors[s:s + chunk].astype(float)
        pts = r * (a[:, None, :] + X[None])
        vals = np.asarray(u(pts.reshape(-1, d)), dtype=float).reshape(len(a), len(X))
        out[s:s + chunk] = vals @ W
    return out


def local_average_project(
    u: Callable[[np.ndarray], np.ndarray],
    grid: GridSpec,
    order: int = 4,
    rtol: float = 1e-8,
    atol: float = 1e-12,
) -> TentCoefficients:
    """Weights ``w_alpha`` = mean of ``u`` over the cube ``r*alpha + [0, r)^d``.

    Cube means use a tensor Gauss rule; a second pass on the 2^d dyadic
    sub-cubes cross-checks each mean and a ``QuadratureWarning`` is raised
    where the two disagree.
    """
    nodes = grid.nodes()
    coarse = _cube_averages(u, nodes, grid.r, order, 1)
    fine = _cube_averages(u, nodes, grid.r, order, 2)
    flag_disagreement(agree(coarse, fine, rtol, atol), "cube averages")
    return TentCoefficients.from_dense(grid, fine)


def clip_coefficients(c: TentCoefficients) -> TentCoefficients:
    """Apply the unit contraction ``0 v (1 ^ w)`` to every weight."""
    return TentCoefficients.from_dense(c.grid, np.clip(c.dense, 0.0, 1.0))
