"""Piecewise-linear time warps and the operations the ball machinery needs.

A warp is an increasing piecewise-linear map ``h`` with ``h(0) = 0``,
stored as knots and values and extended linearly past both ends with the
slope of the outermost segments.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Warp:
    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        k = np.array(self.knots, dtype=np.float64).ravel()
        v = np.array(self.values, dtype=np.float64).ravel()
        if k.size < 2 or k.size != v.size:
            raise ValueError("a warp needs at least two knots and matching values")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
            raise ValueError("warp knots and values must be finite")
        if np.any(np.diff(k) <= 0) or np.any(np.diff(v) <= 0):
            raise ValueError("warp knots and values must be strictly increasing")
        zero = np.flatnonzero(k == 0.0)
        if zero.size != 1 or v[zero[0]] != 0.0:
            raise ValueError("a warp must have the knot 0 with value 0")
        k.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)

    @classmethod
    def identity(cls, horizon: float = 1.0) -> "Warp":
        return cls([0.0, horizon], [0.0, horizon])

    @classmethod
    def linear(cls, slope: float, horizon: float = 1.0) -> "Warp":
        return cls([0.0, horizon], [0.0, slope * horizon])

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)

    def __call__(self, s):
        return _pl_eval(self.knots, self.values, s)

    def inverse(self) -> "Warp":
        return invert(self)

    def __eq__(self, other):
        return (isinstance(other, Warp) and np.array_equal(self.knots, other.knots)
                and np.array_equal(self.values, other.values))

    def to_text(self) -> str:
        buf = io.StringIO()
        np.savetxt(buf, np.column_stack([self.knots, self.values]), fmt="%.17g")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "Warp":
        data = np.loadtxt(io.StringIO(text), ndmin=2)
        return cls(data[:, 0], data[:, 1])


def _pl_eval(xs, ys, s):
    s = np.asarray(s, dtype=np.float64)
    out = np.interp(s, xs, ys)
    lo = (ys[1] - ys[0]) / (xs[1] - xs[0])
    hi = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
    out = np.where(s < xs[0], ys[0] + lo * (s - xs[0]), out)
    out = np.where(s > xs[-1], ys[-1] + hi * (s - xs[-1]), out)
    return out if out.ndim else float(out)


def slope_class(h: Warp) -> float:
    """Largest deviation ``|slope - 1|`` over the segments of ``h``.

    Any two-point difference quotient of a piecewise-linear map is a convex
    combination of segment slopes, so this is also the supremum over all
    pairs of points.
    """
    return float(np.max(np.abs(h.slopes - 1.0)))


def invert(h: Warp) -> Warp:
    return Warp(h.values, h.knots)


def compose(g: Warp, h: Warp) -> Warp:
    """``g o h`` on the merged knot grid (exact for piecewise-linear maps)."""
    pre = invert(h)(g.knots)
    knots = np.union1d(h.knots, np.atleast_1d(pre))
    knots = knots[np.concatenate([[True], np.diff(knots) > 0])]
    if 0.0 not in knots:
        knots = np.union1d(knots, [0.0])
    values = g(h(knots))
    values = np.where(knots == 0.0, 0.0, values)
    keep = np.concatenate([[True], np.diff(values) > 0])
    return Warp(knots[keep], values[keep])


# block slopes exactly on the boundary (1.1 - 1 > 0.1 in binary) are accepted
SLOPE_RTOL = 1e-12


class RegularizationError(ValueError):
    def __init__(self, block: int, slope: float, alpha: float):
        super().__init__(f"block {block} has mean slope {slope!r}, outside [1-{alpha}, 1+{alpha}]")
        self.block = block
        self.slope = slope


def regularize(h: Warp, T: float, alpha: float, horizon: float) -> Warp:
    """Interpolate ``h`` linearly between the block endpoints ``kT``.

    The result agrees with ``h`` at every ``kT <= horizon`` and lies in
    Rep(alpha) as soon as every block's mean slope does.

    Raises
    ------
    RegularizationError
        Naming the first block whose mean slope leaves ``[1-alpha, 1+alpha]``.
    """
    if not T > 0 or not horizon > 0:
        raise ValueError("block length and horizon must be positive")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    blocks = int(math.floor(horizon / T + 1e-9))
    if blocks < 1:
        raise ValueError("horizon shorter than one block")
    knots = np.arange(blocks + 1, dtype=np.float64) * T
    values = np.asarray(h(knots), dtype=np.float64)
    values[0] = 0.0
    slopes = np.diff(values) / np.diff(knots)
    bad = np.flatnonzero(~(np.abs(slopes - 1.0) <= alpha * (1 + SLOPE_RTOL)))
    if bad.size:
        raise RegularizationError(int(bad[0]), float(slopes[bad[0]]), alpha)
    return Warp(knots, values)


@dataclass(frozen=True, eq=False)
class GammaSignature:
    entries: np.ndarray

    def key(self) -> tuple:
        return tuple(int(e) for e in self.entries)

    def __eq__(self, other):
        return isinstance(other, GammaSignature) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __str__(self):
        return " ".join(str(e) for e in self.key())


def gamma_signature(h: Warp, L: float, alpha: float, n: int) -> GammaSignature:
    """``entries[k] = floor((h(kL) - kL) / (alpha L))`` for ``k < n``."""
    if n < 1 or not L > 0 or not 0 < alpha < 1:
        raise ValueError("need n >= 1, L > 0 and alpha in (0, 1)")
    if h.knots[-1] < (n - 1) * L * (1 - 1e-12):
        raise ValueError(f"warp ends at {h.knots[-1]!r}, before {(n - 1) * L!r}")
    s = np.arange(n, dtype=np.float64) * L
    e = np.floor((np.asarray(h(s)) - s) / (alpha * L)).astype(np.int64)
    e[0] = 0
    return GammaSignature(e)


def random_block_warp(rng: np.random.Generator, T: float, alpha: float, horizon: float,
                      pieces: int = 3) -> Warp:
    """Random warp whose block increments ``h((k+1)T) - h(kT)`` lie in ``[(1-alpha)T, (1+alpha)T]``.

    Inside a block the warp is split into ``pieces`` segments with arbitrary
    positive slopes, so the input itself is usually far outside Rep(alpha).
    """
    blocks = int(math.floor(horizon / T + 1e-9)) + 1
    knots, values = [0.0], [0.0]
    for k in range(blocks):
        inc = T * rng.uniform(1.0 - alpha, 1.0 + alpha)
        cuts = np.sort(rng.uniform(0.05, 0.95, pieces - 1)) * T
        shares = rng.dirichlet(np.ones(pieces)) * 0.9 + 0.1 / pieces
        knots.extend((k * T + cuts).tolist() + [(k + 1) * T])
        values.extend((values[-1] + np.cumsum(shares)[:-1] * inc).tolist() + [values[-1] + inc])
    return Warp(knots, values)
