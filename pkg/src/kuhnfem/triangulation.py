"""Coxeter-Freudenthal-Kuhn triangulation of the scaled lattice ``r Z^d``.

Every half-open lattice cube ``alpha + [0, r)^d`` is split into ``d!``
semi-open simplices ``D_T``.  A simplex is the monotone edge path starting at
the cube anchor and walking one unit step along each axis in the order given
by a permutation.  Lattice points are always integer multi-indices; the
physical coordinate of index ``k`` is ``r * k``.

Permutations are stored 0-based: ``perm[j]`` is the axis of the ``(j+1)``-th
step of the path.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "GridSpec",
    "PathSimplex",
    "perm_to_path",
    "perm_from_vertices",
    "lattice_floor",
    "locate",
    "locate_many",
    "membership",
    "simplex_volume",
    "incident_vertices",
    "simplices_leaving",
    "all_perms",
]


class TriangulationError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Dimension, mesh size and an axis-aligned box of lattice indices.

    The box is ``[r*lo, r*hi]`` coordinate-wise; ``lo``/``hi`` are integer
    multi-indices so box corners always lie on the ``r``-lattice.
    """

    d: int
    r: float
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise TriangulationError(f"dimension must be an integer >= 1, got {self.d}")
        if not (self.r > 0 and math.isfinite(self.r)):
            raise TriangulationError(f"mesh size must be positive, got {self.r}")
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if len(lo) != self.d or len(hi) != self.d:
            raise TriangulationError("box corners must have d components")
        if any(a >= b for a, b in zip(lo, hi)):
            raise TriangulationError(f"empty box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "r", float(self.r))

    @classmethod
    def from_bounds(cls, r: float, lower: Sequence[float], upper: Sequence[float]) -> "GridSpec":
        """Grid whose box has corners ``lower``/``upper``; both must be multiples of ``r``."""
        lo, hi = [], []
        for a, b in zip(lower, upper):
            ka, kb = a / r, b / r
            if abs(ka - round(ka)) > 1e-9 or abs(kb - round(kb)) > 1e-9:
                raise TriangulationError(f"box corner ({a}, {b}) is not on the {r}-lattice")
            lo.append(int(round(ka)))
            hi.append(int(round(kb)))
        return cls(len(lo), r, tuple(lo), tuple(hi))

    @classmethod
    def symmetric(cls, d: int, r: float, half_width: float) -> "GridSpec":
        n = int(math.ceil(half_width / r - 1e-12))
        return cls(d, r, (-n,) * d, (n,) * d)

    @property
    def lower(self) -> np.ndarray:
        return self.r * np.asarray(self.lo, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return self.r * np.asarray(self.hi, dtype=float)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    @property
    def node_shape(self) -> tuple[int, ...]:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def cube_shape(self) -> tuple[int, ...]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    def nodes(self) -> np.ndarray:
        """All lattice indices in the closed box, C order, shape (n, d)."""
        axes = [np.arange(a, b + 1) for a, b in zip(self.lo, self.hi)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)

    def cube_anchors(self) -> np.ndarray:
        """Anchors of all cubes inside the box, C order, shape (n, d)."""
        axes = [np.arange(a, b) for a, b in zip(self.lo, self.hi)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)

    def cells(self) -> Iterator["PathSimplex"]:
        perms = all_perms(self.d)
        for anchor in self.cube_anchors():
            a = tuple(int(v) for v in anchor)
            for p in perms:
                yield PathSimplex(a, p, self.r)

    def contains_index(self, k: Sequence[int]) -> bool:
        return all(a <= v <= b for v, a, b in zip(k, self.lo, self.hi))

    def refine(self) -> "GridSpec":
        return GridSpec(self.d, self.r / 2, tuple(2 * v for v in self.lo), tuple(2 * v for v in self.hi))

    def to_dict(self) -> dict:
        return {"d": self.d, "r": self.r, "box": [list(map(float, self.lower)), list(map(float, self.upper))]}


def all_perms(d: int) -> list[tuple[int, ...]]:
    return list(itertools.permutations(range(d)))


def _check_perm(perm: Sequence[int], d: int | None = None) -> tuple[int, ...]:
    p = tuple(int(v) for v in perm)
    n = len(p) if d is None else d
    if len(p) != n or sorted(p) != list(range(n)):
        raise TriangulationError(f"not a permutation of 0..{n - 1}: {perm}")
    return p


@dataclass(frozen=True)
class PathSimplex:
    """Cell ``D_T`` keyed by its anchor index, step permutation and scale."""

    anchor: tuple[int, ...]
    perm: tuple[int, ...]
    r: float

    def __post_init__(self):
        object.__setattr__(self, "anchor", tuple(int(v) for v in self.anchor))
        object.__setattr__(self, "perm", _check_perm(self.perm, len(self.anchor)))

    @property
    def d(self) -> int:
        return len(self.anchor)

    @property
    def key(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return (self.anchor, self.perm)

    def vertex_indices(self) -> np.ndarray:
        """Integer lattice indices of ``T(0), ..., T(d)``, shape (d+1, d)."""
        v = np.zeros((self.d + 1, self.d), dtype=np.int64)
        v[0] = self.anchor
        for j, axis in enumerate(self.perm):
            v[j + 1] = v[j]
            v[j + 1, axis] += 1
        return v

    def vertices(self) -> np.ndarray:
        return self.r * self.vertex_indices().astype(float)

    def vertex_position(self, index: Sequence[int]) -> int | None:
        """Return ``i`` with ``T(i) == index`` or ``None``."""
        rel = np.asarray(index, dtype=np.int64) - np.asarray(self.anchor, dtype=np.int64)
        if np.any((rel < 0) | (rel > 1)):
            return None
        i = int(rel.sum())
        # a vertex T(i) has ones exactly on the first i steps of the path
        if all(rel[self.perm[j]] == (1 if j < i else 0) for j in range(self.d)):
            return i
        return None

    def local(self, x) -> np.ndarray:
        """Cell-local coordinates ``x / r - anchor``."""
        return np.asarray(x, dtype=float) / self.r - np.asarray(self.anchor, dtype=float)


def perm_to_path(perm: Sequence[int], anchor: Sequence[int], r: float) -> PathSimplex:
    """Path simplex with ``T(0) = anchor`` and ``T(j) - T(j-1) = e_{perm[j-1]}``."""
    if not r > 0:
        raise TriangulationError(f"mesh size must be positive, got {r}")
    return PathSimplex(tuple(anchor), _check_perm(perm, len(anchor)), r)


def perm_from_vertices(vertices: np.ndarray, r: float) -> tuple[int, ...]:
    """Read the step permutation back from consecutive vertex differences."""
    diffs = np.diff(np.asarray(vertices, dtype=float), axis=0) / r
    perm = []
    for row in diffs:
        axes = np.flatnonzero(np.abs(row) > 0.5)
        if len(axes) != 1 or abs(row[axes[0]] - 1.0) > 1e-9:
            raise TriangulationError("vertex list is not a monotone unit edge path")
        perm.append(int(axes[0]))
    return _check_perm(perm)


def lattice_floor(x, r: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``floor(x / r)`` and the fractional part ``x / r - floor``.

    Floating-point division can round ``x / r`` across an integer; near-integer
    quotients are therefore re-decided with exact rational arithmetic on the
    binary values of ``x`` and ``r``.
    """
    x = np.asarray(x, dtype=float)
    q = x / r
    k = np.floor(q)
    near = np.abs(q - np.rint(q)) < 1e-9
    if np.any(near):
        rf = Fraction(r)
        for idx in zip(*np.nonzero(near)):
            k[idx] = math.floor(Fraction(float(x[idx])) / rf)
    frac = q - k
    # a quotient rounded up to an integer while the exact value is below it
    frac = np.where(frac >= 1.0, np.nextafter(1.0, 0.0), frac)
    frac = np.where(frac < 0.0, 0.0, frac)
    return k.astype(np.int64), frac


def _sort_perm(frac: np.ndarray) -> np.ndarray:
    d = frac.shape[-1]
    idx = np.broadcast_to(np.arange(d), frac.shape)
    # descending lexicographic order on (fraction, axis)
    return np.lexsort((-idx, -frac), axis=-1)


def locate_many(x, r: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised point location.

    Returns ``(anchors, perms, local)`` for points ``x`` of shape (n, d): the
    integer cube anchors, the 0-based step permutations of the owning cells,
    and the cell-local coordinates in ``[0, 1)^d``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k, frac = lattice_floor(x, r)
    return k, _sort_perm(frac), frac


def locate(x, grid_or_r) -> PathSimplex:
    r = grid_or_r.r if isinstance(grid_or_r, GridSpec) else float(grid_or_r)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    k, perms, _ = locate_many(x, r)
    return PathSimplex(tuple(k[0]), tuple(int(v) for v in perms[0]), r)


def membership(x, T: PathSimplex) -> bool:
    """Whether ``x`` lies in the semi-open cell ``D_T``.

    Chain ``0 <= y[p_d] ~ y[p_{d-1}] ~ ... ~ y[p_1] < 1`` with ``y`` the local
    coordinates; the link between positions ``j-1`` and ``j`` is strict when
    ``p_{j-1} < p_j`` and non-strict otherwise.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    k, frac = lattice_floor(x, T.r)
    y = frac.astype(float) + (k - np.asarray(T.anchor)).astype(float)
    p = T.perm
    if not (0.0 <= y[p[-1]] and y[p[0]] < 1.0):
        return False
    for j in range(1, T.d):
        lo, hi = y[p[j]], y[p[j - 1]]
        if p[j - 1] < p[j]:
            if not lo < hi:
                return False
        elif not lo <= hi:
            return False
    return True


def simplex_volume(grid_or_d, r: float | None = None) -> float:
    if isinstance(grid_or_d, GridSpec):
        d, r = grid_or_d.d, grid_or_d.r
    else:
        d = int(grid_or_d)
    return r ** d / math.factorial(d)


def incident_vertices(alpha: Sequence[int], grid_or_r) -> list[tuple[PathSimplex, int]]:
    """All ``(T, i)`` with ``T(i) = alpha``; there are ``(d+1)!`` of them."""
    r = grid_or_r.r if isinstance(grid_or_r, GridSpec) else float(grid_or_r)
    alpha = np.asarray(alpha, dtype=np.int64)
    d = len(alpha)
    out = []
    for p in all_perms(d):
        for i in range(d + 1):
            anchor = alpha.copy()
            for j in range(i):
                anchor[p[j]] -= 1
            out.append((PathSimplex(tuple(anchor), p, r), i))
    return out


def simplices_leaving(alpha: Sequence[int], axis: int, grid_or_r) -> list[PathSimplex]:
    """Cells whose path leaves ``alpha`` in direction ``axis`` (0-based); ``d!`` of them."""
    r = grid_or_r.r if isinstance(grid_or_r, GridSpec) else float(grid_or_r)
    alpha = np.asarray(alpha, dtype=np.int64)
    d = len(alpha)
    if not 0 <= axis < d:
        raise TriangulationError(f"axis {axis} out of range for d={d}")
    out = []
    for p in all_perms(d):
        pos = p.index(axis)
        anchor = alpha.copy()
        for j in range(pos):
            anchor[p[j]] -= 1
        out.append(PathSimplex(tuple(anchor), p, r))
    return out
