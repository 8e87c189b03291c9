"""Quadrature rules on the reference Kuhn simplex and the unit cube."""
from __future__ import annotations

import warnings
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .triangulation import all_perms


class QuadratureWarning(UserWarning):
    """Two successive quadrature refinements disagreed beyond tolerance."""


@lru_cache(maxsize=None)
def ordered_simplex_rule(d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Conical product rule on ``{1 >= y_1 >= y_2 >= ... >= y_d >= 0}``.

    Uses ``y_k = u_1 * ... * u_k`` with Gauss-Jacobi nodes in each ``u_k``
    (weight ``u_k^(d-k)``), exact for polynomials of degree ``2n - 1``.
    Weights sum to ``1/d!``.  Returns ``(points (q, d), weights (q,))``.
    """
    nodes, weights = [], []
    for k in range(1, d + 1):
        beta = d - k
        x, w = roots_jacobi(n, 0.0, float(beta))
        nodes.append((x + 1.0) / 2.0)
        weights.append(w / 2.0 ** (beta + 1))
    U = np.stack(np.meshgrid(*nodes, indexing="ij"), axis=-1).reshape(-1, d)
    W = np.prod(np.stack(np.meshgrid(*weights, indexing="ij"), axis=-1).reshape(-1, d), axis=1)
    Y = np.cumprod(U, axis=1)
    Y.setflags(write=False)
    W.setflags(write=False)
    return Y, W


@lru_cache(maxsize=None)
def kuhn_cell_rule(d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule for every cell of the unit cube at once.

    Returns local points of shape (d!, q, d) (cell ``s`` is the ``s``-th
    permutation of :func:`all_perms`) and weights (q,) summing to ``1/d!``.
    """
    Y, W = ordered_simplex_rule(d, n)
    perms = all_perms(d)
    P = np.empty((len(perms),) + Y.shape)
    for s, p in enumerate(perms):
        # position j of the path carries axis p[j]: x[p[j]] = y_{j+1}
        P[s][:, list(p)] = Y
    P.setflags(write=False)
    return P, W


@lru_cache(maxsize=None)
def cube_rule(d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre on ``[0, 1]^d``."""
    x, w = roots_legendre(n)
    x = (x + 1.0) / 2.0
    w = w / 2.0
    X = np.stack(np.meshgrid(*([x] * d), indexing="ij"), axis=-1).reshape(-1, d)
    Wt = np.prod(np.stack(np.meshgrid(*([w] * d), indexing="ij"), axis=-1).reshape(-1, d), axis=1)
    X.setflags(write=False)
    Wt.setflags(write=False)
    return X, Wt


def agree(coarse, fine, rtol: float, atol: float = 0.0) -> np.ndarray:
    coarse = np.asarray(coarse)
    fine = np.asarray(fine)
    return np.abs(coarse - fine) <= np.maximum(rtol * np.abs(fine), atol)


def flag_disagreement(ok: np.ndarray, what: str) -> None:
    bad = int(np.size(ok) - np.count_nonzero(ok))
    if bad:
        warnings.warn(f"{what}: {bad} of {np.size(ok)} entries did not converge", QuadratureWarning, stacklevel=3)
