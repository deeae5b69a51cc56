"""Concrete regular flows, their metrics, and orbit sampling.

Two families are provided:

* ``torus``: the unit-speed linear flow on the flat 2-torus.
* ``suspension``: the constant-roof (height 1) suspension of the full
  shift on ``alphabet_size`` symbols. A point is a two-sided sequence,
  generated lazily from a symbol source, plus a roof coordinate in [0, 1).

The suspension metric compares lifted representatives. ``x = (a, r)`` is
lifted to ``(sigma^k a, r - k)`` for ``k`` in {-1, 0, 1}, and each lift is
compared with ``y = (b, r')`` through the roof gap ``|r - k - r'|`` and a
shift distance read in the frame of the mean height. That frame is blended
linearly between the two integer frames around the mean height, which makes
the distance continuous across the gluing ``(a, 1) ~ (sigma a, 0)`` and
exactly symmetric.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np

from . import _kernels as K

PROBE_WINDOW = 64
_PAD = PROBE_WINDOW + 4


# ------------------------------------------------------------ symbol sources


def _splitmix_np(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    z = x
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _cumulative(probs):
    return np.cumsum(np.asarray(probs, dtype=np.float64))[:-1].copy()


def check_probs(probs) -> tuple[float, ...]:
    """Validate a probability vector and return it as a tuple of floats."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("probability vector needs at least two entries")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probability vector has negative or non-finite entries")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"probability vector sums to {p.sum()!r}, not 1")
    return tuple(float(v) for v in p)


@dataclass(frozen=True)
class BernoulliSymbols:
    """I.i.d. symbols from a counter-based hash of ``(seed, index)``."""

    seed: int
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", check_probs(self.probs))
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    @property
    def alphabet_size(self) -> int:
        return len(self.probs)

    def symbols(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        with np.errstate(over="ignore"):
            h = _splitmix_np(np.uint64(self.seed) ^ _splitmix_np(idx.view(np.uint64)))
        u = (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return np.searchsorted(_cumulative(self.probs), u, side="right").astype(np.uint8)


@dataclass(frozen=True)
class PeriodicSymbols:
    """The periodic sequence ``word[n mod len(word)]``."""

    word: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "word", tuple(int(s) for s in self.word))
        if not self.word or min(self.word) < 0:
            raise ValueError("periodic word must be a nonempty tuple of symbols")

    @property
    def alphabet_size(self) -> int:
        return max(self.word) + 1

    def symbols(self, idx) -> np.ndarray:
        w = np.asarray(self.word, dtype=np.uint8)
        return w[np.mod(np.asarray(idx, dtype=np.int64), len(w))]


@dataclass(frozen=True)
class SplicedSymbols:
    """``inner`` on the index range ``[lo, hi]`` and ``outer`` elsewhere."""

    inner: "SymbolSource"
    outer: "SymbolSource"
    lo: int
    hi: int

    @property
    def alphabet_size(self) -> int:
        return max(self.inner.alphabet_size, self.outer.alphabet_size)

    def symbols(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        inside = (idx >= self.lo) & (idx <= self.hi)
        return np.where(inside, self.inner.symbols(idx), self.outer.symbols(idx)).astype(np.uint8)


SymbolSource = Union[BernoulliSymbols, PeriodicSymbols, SplicedSymbols]


# ------------------------------------------------------------------ points


@dataclass(frozen=True)
class TorusPoint:
    u: float
    v: float

    def __post_init__(self):
        u, v = float(self.u) % 1.0, float(self.v) % 1.0
        object.__setattr__(self, "u", 0.0 if u >= 1.0 else u)
        object.__setattr__(self, "v", 0.0 if v >= 1.0 else v)


@dataclass(frozen=True)
class SuspensionPoint:
    """Sequence ``n -> source[offset + n]`` at height ``roof``."""

    source: SymbolSource
    offset: int = 0
    roof: float = 0.0

    def __post_init__(self):
        k, r = K.roof_advance(float(self.roof), 0.0)
        object.__setattr__(self, "roof", r)
        object.__setattr__(self, "offset", int(self.offset) + int(k))

    def symbols(self, idx) -> np.ndarray:
        return self.source.symbols(np.asarray(idx, dtype=np.int64) + self.offset)


PhasePoint = Union[TorusPoint, SuspensionPoint]


# ------------------------------------------------------------------- flows


@dataclass(frozen=True)
class FlowSystem:
    family: str
    direction: tuple[float, float] = (1.0, 0.0)
    alphabet_size: int = 2
    roof_height: float = 1.0

    def __post_init__(self):
        if self.family not in ("torus", "suspension"):
            raise ValueError(f"unknown flow family {self.family!r}")
        if self.family == "torus":
            a, b = (float(c) for c in self.direction)
            norm = math.hypot(a, b)
            if not norm > 0 or not math.isfinite(norm):
                raise ValueError("torus direction must be a nonzero finite vector")
            object.__setattr__(self, "direction", (a / norm, b / norm))
        else:
            if int(self.alphabet_size) < 2:
                raise ValueError("alphabet_size must be at least 2")
            object.__setattr__(self, "alphabet_size", int(self.alphabet_size))
        if self.roof_height != 1.0:
            raise ValueError("only roof_height = 1 is supported")

    @classmethod
    def torus(cls, direction=(1.0, (1 + 5 ** 0.5) / 2)) -> "FlowSystem":
        return cls("torus", direction=tuple(direction))

    @classmethod
    def suspension(cls, alphabet_size: int = 2) -> "FlowSystem":
        return cls("suspension", alphabet_size=alphabet_size)

    @property
    def code(self) -> int:
        return K.TORUS if self.family == "torus" else K.SUSPENSION

    @property
    def diameter(self) -> float:
        return math.sqrt(0.5) if self.family == "torus" else 1.0

    def owns(self, x) -> bool:
        if self.family == "torus":
            return isinstance(x, TorusPoint)
        return isinstance(x, SuspensionPoint)

    def check(self, *points):
        for x in points:
            if not self.owns(x):
                raise TypeError(f"{type(x).__name__} is not a point of the {self.family} flow")


def flow_map(flow: FlowSystem, x: PhasePoint, t: float) -> PhasePoint:
    """Exact time-``t`` image of ``x``."""
    flow.check(x)
    if flow.family == "torus":
        a, b = flow.direction
        u, v = K.torus_at(x.u, x.v, a, b, float(t))
        return TorusPoint(u, v)
    k, r = K.roof_advance(x.roof, float(t))
    return SuspensionPoint(x.source, x.offset + int(k), r)


def distance(flow: FlowSystem, x: PhasePoint, y: PhasePoint) -> float:
    flow.check(x, y)
    if flow.family == "torus":
        return float(K.torus_dist(x.u, x.v, y.u, y.v))
    cx = Cloud.of(flow, [x, y], 0.0, 0.0)
    return float(K.susp_dist(cx.S[0], cx.C[0], cx.F[0, 0], cx.S[1], cx.C[1], cx.F[1, 0],
                             PROBE_WINDOW))


@dataclass(frozen=True)
class OrbitTrace:
    base: PhasePoint
    step: float
    horizon: float
    points: tuple


def steps_in(t: float, step: float) -> int:
    """Number of whole steps of size ``step`` in ``[0, t]``, robust to rounding."""
    return int(math.floor(t / step + 1e-9))


def sample_orbit(flow: FlowSystem, x: PhasePoint, step: float, t: float) -> OrbitTrace:
    if not step > 0:
        raise ValueError("step must be positive")
    if t < 0:
        raise ValueError("horizon must be nonnegative")
    pts = tuple(flow_map(flow, x, i * step) for i in range(steps_in(t, step) + 1))
    return OrbitTrace(x, float(step), float(t), pts)


# ------------------------------------------------------------ point clouds


@dataclass
class Cloud:
    """Kernel-ready arrays for a batch of points.

    ``S`` holds each suspension point's symbols for relative indices
    ``lo .. lo + width - 1``; ``C`` is the column of relative index 0.
    Time shifts within ``[t_lo, t_hi]`` stay inside the window.
    """

    family: int
    F: np.ndarray
    C: np.ndarray
    S: np.ndarray

    def __len__(self):
        return self.F.shape[0]

    @staticmethod
    def window(t_lo: float, t_hi: float) -> tuple[int, int]:
        lo = int(math.floor(min(t_lo, 0.0))) - _PAD
        hi = int(math.ceil(max(t_hi, 0.0))) + _PAD
        return lo, hi - lo + 1

    @classmethod
    def of(cls, flow: FlowSystem, points, t_lo: float, t_hi: float) -> "Cloud":
        points = list(points)
        n = len(points)
        if flow.family == "torus":
            F = np.array([[p.u, p.v] for p in points], dtype=np.float64).reshape(n, 2)
            return cls(K.TORUS, F, np.zeros(n, np.int64), np.zeros((n, 1), np.uint8))
        lo, width = cls.window(t_lo, t_hi)
        F = np.zeros((n, 2))
        F[:, 0] = [p.roof for p in points]
        S = np.empty((n, width), np.uint8)
        rel = np.arange(lo, lo + width, dtype=np.int64)
        cache = {}
        for i, p in enumerate(points):
            key = (p.source, p.offset)
            if key not in cache:
                cache[key] = p.symbols(rel)
            S[i] = cache[key]
        return cls(K.SUSPENSION, F, np.full(n, -lo, np.int64), S)

    def take(self, idx) -> "Cloud":
        idx = np.asarray(idx, dtype=np.int64)
        return Cloud(self.family, self.F[idx], self.C[idx], self.S[idx])

    def row(self, i: int):
        return self.F[i], int(self.C[i]), self.S[i]


def kernel_args(flow: FlowSystem):
    a, b = flow.direction
    return float(a), float(b), PROBE_WINDOW


# ------------------------------------------------------------ orbit moduli


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named sub-stream of a root seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF,
                                                         zlib.crc32(name.encode())]))


def probe_points(flow: FlowSystem, count: int, seed: int = 0) -> list:
    """Probe points: uniform on the torus, uniform symbols x uniform roof otherwise."""
    rng = substream(seed, "probes")
    if flow.family == "torus":
        return [TorusPoint(u, v) for u, v in rng.random((count, 2))]
    probs = (1.0 / flow.alphabet_size,) * flow.alphabet_size
    seeds = rng.integers(0, 2 ** 63, size=count)
    roofs = rng.random(count)
    return [SuspensionPoint(BernoulliSymbols(int(s), probs), 0, float(r))
            for s, r in zip(seeds, roofs)]


def probe_times(probe_step: float, count: int = 4) -> np.ndarray:
    return probe_step * np.arange(count, dtype=np.float64)


def shift_profile(flow: FlowSystem, points, times, shifts) -> np.ndarray:
    """``max_{p, t} d(phi_t p, phi_{t+s} p)`` for every ``s`` in ``shifts``."""
    times = np.asarray(times, dtype=np.float64)
    shifts = np.asarray(shifts, dtype=np.float64)
    span = (times.min() + min(shifts.min(), 0.0), times.max() + max(shifts.max(), 0.0))
    cloud = Cloud.of(flow, points, *span)
    a, b, w = kernel_args(flow)
    return K.shift_profile(cloud.family, cloud.F, cloud.C, cloud.S, times, shifts, a, b, w)


def theta_for(flow: FlowSystem, eps: float, probe_step: float = 0.37, probe_count: int = 16,
              theta_max: float = 0.5, bits: int = 12, seed: int = 0) -> float:
    """Largest dyadic ``theta`` with ``d(phi_t x, phi_{t+s} x) <= eps`` for ``|s| <= theta``.

    The supremum runs over ``probe_count`` probe points, the probe times
    ``0, probe_step, 2 probe_step, 3 probe_step`` and the shifts
    ``s = +-m theta_max / 2**bits``. The certificate covers only those probes.

    Raises
    ------
    ValueError
        If ``eps`` is not positive or lies below the first grid shift.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if eps >= flow.diameter:
        return float(theta_max)
    grid = theta_max * np.arange(1, 2 ** bits + 1) / 2 ** bits
    prof = _theta_profile(flow, probe_step, probe_count, theta_max, bits, seed)
    ok = np.maximum.accumulate(prof) <= eps
    if not ok[0]:
        raise ValueError("eps is below the resolution of the theta search grid")
    return float(grid[np.flatnonzero(ok)[-1]])


@lru_cache(maxsize=64)
def _theta_profile(flow, probe_step, probe_count, theta_max, bits, seed):
    grid = theta_max * np.arange(1, 2 ** bits + 1) / 2 ** bits
    pts = probe_points(flow, probe_count, seed)
    times = probe_times(probe_step)
    plus = shift_profile(flow, pts, times, grid)
    minus = shift_profile(flow, pts, times, -grid)
    out = np.maximum(plus, minus)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=256)
def orbit_modulus(flow: FlowSystem, tau: float, probe_count: int = 16, seed: int = 0) -> float:
    """Empirical ``sup d(z, phi_u z)`` over probe points and ``|u| <= tau``."""
    if tau <= 0:
        return 0.0
    shifts = tau * np.arange(1, 9) / 8.0
    pts = probe_points(flow, probe_count, seed)
    times = probe_times(0.37)
    return float(max(shift_profile(flow, pts, times, shifts).max(),
                     shift_profile(flow, pts, times, -shifts).max()))


def grid_slack(flow: FlowSystem, step: float, alpha: float) -> float:
    """Continuous-time correction for a lattice path with row step ``step``.

    Between rows the center moves by at most ``step/2`` from the nearest row
    and the warped orbit by at most ``(1 + alpha) step / 2`` from its
    nearest lattice value, so each side contributes its orbit modulus.
    """
    return orbit_modulus(flow, step / 2.0) + orbit_modulus(flow, (1.0 + alpha) * step / 2.0)
