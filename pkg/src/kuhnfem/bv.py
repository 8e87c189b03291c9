"""Finitely-piecewise-affine functions of bounded variation on the real line.

A :class:`BVFunction` is described by sorted break points ``b_1 < ... < b_n``,
one affine piece on each open interval between them (the two unbounded
pieces must be constant) and an explicit value at every break point.  This
makes total variation, window infima/suprema and the Jordan decomposition
exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate, stats

from .seeding import task_rng

__all__ = [
    "BVFunction",
    "jordan_decompose",
    "bv_envelopes",
    "potential_Q",
    "partition_function",
    "exact_partition_function",
    "gaussian_factor",
]


@dataclass(frozen=True)
class BVFunction:
    breaks: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    point_values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float).reshape(-1)
        s = np.asarray(self.slopes, dtype=float).reshape(-1)
        c = np.asarray(self.intercepts, dtype=float).reshape(-1)
        p = np.asarray(self.point_values, dtype=float).reshape(-1)
        n = len(b)
        if len(s) != n + 1 or len(c) != n + 1 or len(p) != n:
            raise ValueError("need n breaks, n+1 pieces and n point values")
        if n and np.any(np.diff(b) <= 0):
            raise ValueError("break points must be strictly increasing")
        if s[0] != 0.0 or s[-1] != 0.0:
            raise ValueError("unbounded pieces must be constant")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(s)) and np.all(np.isfinite(c)) and np.all(np.isfinite(p))):
            raise ValueError("non-finite BV data")
        for name, arr in (("breaks", b), ("slopes", s), ("intercepts", c), ("point_values", p)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # construction helpers
    @classmethod
    def constant(cls, value: float) -> "BVFunction":
        return cls(np.empty(0), [0.0], [float(value)], np.empty(0))

    @classmethod
    def step(cls, at: float = 0.0, height: float = 1.0, closed: bool = False) -> "BVFunction":
        """``height * 1_{(at, inf)}``, or ``1_{[at, inf)}`` when ``closed``."""
        return cls([at], [0.0, 0.0], [0.0, height], [height if closed else 0.0])

    @classmethod
    def staircase(cls, breaks: Sequence[float], jumps: Sequence[float], base: float = 0.0, closed: bool = False) -> "BVFunction":
        levels = base + np.concatenate([[0.0], np.cumsum(jumps)])
        pv = levels[1:] if closed else levels[:-1]
        return cls(breaks, np.zeros(len(levels)), levels, pv)

    @classmethod
    def piecewise_linear(cls, knots: Sequence[float], values: Sequence[float]) -> "BVFunction":
        """Continuous interpolant of ``(knots, values)``, constant outside the knot range."""
        k = np.asarray(knots, dtype=float)
        v = np.asarray(values, dtype=float)
        if len(k) == 1:
            return cls.constant(v[0])
        sl = np.diff(v) / np.diff(k)
        ic = v[:-1] - sl * k[:-1]
        slopes = np.concatenate([[0.0], sl, [0.0]])
        inter = np.concatenate([[v[0]], ic, [v[-1]]])
        return cls(k, slopes, inter, v)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "BVFunction":
        kind = doc.get("kind", "pieces")
        if kind == "zero":
            return cls.constant(0.0)
        if kind == "constant":
            return cls.constant(float(doc["value"]))
        if kind == "step":
            return cls.step(float(doc.get("at", 0.0)), float(doc.get("height", 1.0)), bool(doc.get("closed", False)))
        if kind == "staircase":
            return cls.staircase(doc["breaks"], doc["jumps"], float(doc.get("base", 0.0)), bool(doc.get("closed", False)))
        if kind == "clip":
            # height * clip(x / width, -1, 1): a continuous BV function
            w = float(doc.get("width", 1.0))
            h = float(doc.get("height", 1.0))
            return cls.piecewise_linear([-w, w], [-h, h])
        if kind == "pieces":
            return cls(doc["breaks"], doc["slopes"], doc["intercepts"], doc["point_values"])
        raise ValueError(f"unknown BV function kind {kind!r}")

    def to_dict(self) -> dict:
        return {
            "kind": "pieces",
            "breaks": self.breaks.tolist(),
            "slopes": self.slopes.tolist(),
            "intercepts": self.intercepts.tolist(),
            "point_values": self.point_values.tolist(),
        }

    # evaluation
    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        j = np.searchsorted(self.breaks, x, side="left")
        out = self.slopes[j] * x + self.intercepts[j]
        if len(self.breaks):
            jj = np.minimum(j, len(self.breaks) - 1)
            on = self.breaks[jj] == x
            out = np.where(on, self.point_values[jj], out)
        return out

    def left_limits(self) -> np.ndarray:
        return self.slopes[:-1] * self.breaks + self.intercepts[:-1]

    def right_limits(self) -> np.ndarray:
        return self.slopes[1:] * self.breaks + self.intercepts[1:]

    @property
    def jump_points(self) -> np.ndarray:
        """Break points where ``f`` is discontinuous (the set ``U_f``)."""
        lo, hi = self.left_limits(), self.right_limits()
        mask = (lo != self.point_values) | (hi != self.point_values)
        return self.breaks[mask]

    @property
    def sup_norm(self) -> float:
        cand = [abs(self.intercepts[0]), abs(self.intercepts[-1])]
        if len(self.breaks):
            cand += list(np.abs(self.left_limits())) + list(np.abs(self.right_limits())) + list(np.abs(self.point_values))
        return float(max(cand))

    @property
    def total_variation(self) -> float:
        if not len(self.breaks):
            return 0.0
        lengths = np.diff(self.breaks)
        affine = float(np.sum(np.abs(self.slopes[1:-1]) * lengths))
        jumps = np.abs(self.point_values - self.left_limits()) + np.abs(self.right_limits() - self.point_values)
        return affine + float(np.sum(jumps))

    def window_extrema(self, lo, hi) -> tuple[np.ndarray, np.ndarray]:
        """Exact ``inf`` and ``sup`` of ``f`` over closed windows ``[lo, hi]``."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        fl, fh = self(lo), self(hi)
        inf = np.minimum(fl, fh)
        sup = np.maximum(fl, fh)
        if len(self.breaks):
            b = self.breaks[None, :]
            inside = (b >= lo[:, None]) & (b <= hi[:, None])
            left_ok = (b > lo[:, None]) & inside
            right_ok = (b < hi[:, None]) & inside
            cands = [
                (inside, self.point_values),
                (left_ok, self.left_limits()),
                (right_ok, self.right_limits()),
            ]
            for mask, vals in cands:
                v = np.broadcast_to(vals[None, :], mask.shape)
                inf = np.minimum(inf, np.where(mask, v, np.inf).min(axis=1))
                sup = np.maximum(sup, np.where(mask, v, -np.inf).max(axis=1))
        return inf, sup

    def modulus(self, eps: float) -> float:
        """Oscillation ``sup |f(x) - f(y)|`` over ``|x - y| <= eps``, from break-anchored windows.

        Each extremal pair can be slid until one end hits a break or the
        other window end sits on a break, so windows anchored at every break
        from both sides capture the sup.
        """
        if not len(self.breaks):
            return 0.0
        b = self.breaks
        lo = np.concatenate([b - eps, b])
        hi = np.concatenate([b, b + eps])
        inf, sup = self.window_extrema(lo, hi)
        return float(np.max(sup - inf))


def jordan_decompose(f: BVFunction) -> tuple[float, BVFunction, BVFunction]:
    """``f = a + f1 - f2`` with increasing ``f1, f2`` starting at 0 at ``-inf``."""
    a = float(f.intercepts[0])
    if not len(f.breaks):
        z = BVFunction.constant(0.0)
        return a, z, z
    lo, hi = f.left_limits(), f.right_limits()
    parts = []
    for sign in (1.0, -1.0):
        n = len(f.breaks)
        slopes = np.maximum(sign * f.slopes, 0.0)
        intercepts = np.empty(n + 1)
        pv = np.empty(n)
        intercepts[0] = 0.0
        for j in range(n):
            b = f.breaks[j]
            left = slopes[j] * b + intercepts[j]
            at = left + max(sign * (f.point_values[j] - lo[j]), 0.0)
            right = at + max(sign * (hi[j] - f.point_values[j]), 0.0)
            pv[j] = at
            intercepts[j + 1] = right - slopes[j + 1] * b
        parts.append(BVFunction(f.breaks, slopes, intercepts, pv))
    return a, parts[0], parts[1]


def bv_envelopes(f: BVFunction, m: int) -> tuple[BVFunction, BVFunction]:
    """Continuous minorant and majorant built from windowed inf/sup on the ``1/m`` lattice."""
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    m = int(m)
    if not len(f.breaks):
        return f, f
    j = np.arange(int(np.floor(m * f.breaks[0])) - 2, int(np.ceil(m * f.breaks[-1])) + 3)
    knots = j / m
    inf, sup = f.window_extrema(knots - 1.0 / m, knots + 1.0 / m)
    return BVFunction.piecewise_linear(knots, inf), BVFunction.piecewise_linear(knots, sup)


def potential_Q(f: BVFunction, lam, h) -> np.ndarray:
    """``Q_f(h) = sum_k lam_k f(h_k)`` over the last axis of ``h``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("weights must be finite and nonnegative")
    h = np.asarray(h, dtype=float)
    return f(h) @ lam


def gaussian_factor(f: BVFunction, lam: float, sigma: float) -> float:
    """``E exp(-lam f(sigma Z))`` for a standard normal ``Z``, by piecewise quadrature."""
    if not len(f.breaks):
        return float(np.exp(-lam * f.intercepts[0]))
    edges = np.concatenate([[-np.inf], f.breaks, [np.inf]])
    total = 0.0
    for j in range(len(edges) - 1):
        s, c = f.slopes[j], f.intercepts[j]
        a, b = edges[j], edges[j + 1]
        if s == 0.0:
            mass = stats.norm.cdf(b / sigma) - stats.norm.cdf(a / sigma)
            total += np.exp(-lam * c) * mass
        else:
            val, _ = integrate.quad(
                lambda x: np.exp(-lam * (s * x + c)) * stats.norm.pdf(x / sigma) / sigma, a, b, epsabs=1e-15, epsrel=1e-13
            )
            total += val
    return float(total)


def exact_partition_function(f: BVFunction, lam, sigma, N: int) -> float:
    """Product-form value of ``E exp(-Q_f(P_N X))`` for independent ``X_k ~ N(0, sigma_k^2)``.

    Coordinates beyond ``N`` are zeroed by the projection and contribute
    ``exp(-lam_k f(0))``.
    """
    lam = np.asarray(lam, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    z = 1.0
    for k in range(len(lam)):
        if k < N:
            z *= gaussian_factor(f, lam[k], sigma[k])
        else:
            z *= float(np.exp(-lam[k] * f(0.0)))
    return z


def partition_function(
    f: BVFunction,
    lam,
    sigma,
    N: int,
    mc_samples: int,
    seed: int = 0,
    task: str = "partition",
    batch: int = 200_000,
) -> tuple[float, float]:
    """Monte Carlo estimate ``(Z_N, stderr)`` of ``E exp(-Q_f(P_N X))``."""
    lam = np.asarray(lam, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    D = len(lam)
    if not 0 <= N <= D:
        raise ValueError(f"N={N} must lie in 0..{D}")
    if mc_samples < 2:
        raise ValueError("need at least two Monte Carlo samples")
    rng = task_rng(seed, f"{task}/N={N}")
    tail = float(np.exp(-lam[N:].sum() * f(0.0)))
    s1 = s2 = 0.0
    done = 0
    while done < mc_samples:
        n = min(batch, mc_samples - done)
        X = rng.standard_normal((n, N)) * sigma[:N]
        v = np.exp(-potential_Q(f, lam[:N], X)) * tail
        s1 += float(v.sum())
        s2 += float((v * v).sum())
        done += n
    mean = s1 / mc_samples
    var = max(s2 / mc_samples - mean * mean, 0.0) * mc_samples / (mc_samples - 1)
    return mean, float(np.sqrt(var / mc_samples))
