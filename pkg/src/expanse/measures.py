"""Empirical measures and Monte-Carlo masses of dynamical balls."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Optional, Sequence

import numpy as np

from . import _kernels as K
from .flows import (BernoulliSymbols, Cloud, FlowSystem, PhasePoint, SuspensionPoint,
                    TorusPoint, check_probs, distance, flow_map, kernel_args, steps_in,
                    substream, theta_for)
from .warp_align import BallQuery, Lattice, membership_rows

# --------------------------------------------------------------- stores


class _TorusStore:
    def __init__(self, uv):
        self.uv = np.ascontiguousarray(uv, dtype=np.float64).reshape(-1, 2)

    def __len__(self):
        return self.uv.shape[0]

    def point(self, i):
        return TorusPoint(*self.uv[i])

    def keys(self):
        return [tuple(r) for r in self.uv.tolist()]

    def take(self, idx):
        return _TorusStore(self.uv[idx])

    def cloud(self, flow, t_lo, t_hi):
        n = len(self)
        return Cloud(K.TORUS, self.uv, np.zeros(n, np.int64), np.zeros((n, 1), np.uint8))

    def push(self, flow, t):
        a, b = flow.direction
        return _TorusStore(K.torus_push(self.uv, a, b, float(t)))


class _BernoulliStore:
    """Samples sharing one probability vector, each with its own seed."""

    def __init__(self, seeds, offsets, roofs, probs):
        self.seeds = np.asarray(seeds, dtype=np.uint64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.roofs = np.asarray(roofs, dtype=np.float64)
        self.probs = check_probs(probs)

    def __len__(self):
        return self.seeds.shape[0]

    def point(self, i):
        return SuspensionPoint(BernoulliSymbols(int(self.seeds[i]), self.probs),
                               int(self.offsets[i]), float(self.roofs[i]))

    def keys(self):
        return list(zip(self.seeds.tolist(), self.offsets.tolist(), self.roofs.tolist()))

    def take(self, idx):
        return _BernoulliStore(self.seeds[idx], self.offsets[idx], self.roofs[idx], self.probs)

    def cloud(self, flow, t_lo, t_hi):
        lo, width = Cloud.window(t_lo, t_hi)
        cum = np.cumsum(np.asarray(self.probs))[:-1].copy()
        S = K.bernoulli_window(self.seeds, self.offsets, lo, width, cum)
        F = np.zeros((len(self), 2))
        F[:, 0] = self.roofs
        return Cloud(K.SUSPENSION, F, np.full(len(self), -lo, np.int64), S)

    def push(self, flow, t):
        roofs, offsets = K.roof_push(self.roofs, self.offsets, float(t))
        return _BernoulliStore(self.seeds, offsets, roofs, self.probs)


class _ListStore:
    def __init__(self, points):
        self.points = tuple(points)

    def __len__(self):
        return len(self.points)

    def point(self, i):
        return self.points[i]

    def keys(self):
        return list(self.points)

    def take(self, idx):
        return _ListStore([self.points[i] for i in np.asarray(idx).tolist()])

    def cloud(self, flow, t_lo, t_hi):
        return Cloud.of(flow, self.points, t_lo, t_hi)

    def push(self, flow, t):
        return _ListStore([flow_map(flow, p, t) for p in self.points])


# -------------------------------------------------------------- measure


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted finite sample standing in for a Borel probability measure."""

    flow: FlowSystem
    descriptor: dict
    seed: int
    store: Any
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(self.store),) or np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must be positive, one per sample, summing to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.store)

    def point(self, i: int) -> PhasePoint:
        return self.store.point(int(i))

    @property
    def points(self) -> list:
        return [self.store.point(i) for i in range(len(self))]

    @property
    def samples(self) -> list:
        return list(zip(self.points, self.weights.tolist()))

    @cached_property
    def atoms(self):
        """Distinct sample states: ``(first index per atom, atom of every sample)``."""
        seen = {}
        inverse = np.empty(len(self), np.int64)
        first = []
        for i, key in enumerate(self.store.keys()):
            j = seen.setdefault(key, len(first))
            if j == len(first):
                first.append(i)
            inverse[i] = j
        return np.asarray(first, np.int64), inverse

    @cached_property
    def _atom_store(self):
        first, _ = self.atoms
        return self.store if first.size == len(self) else self.store.take(first)

    def atom_cloud(self, t_lo, t_hi) -> Cloud:
        return self._atom_store.cloud(self.flow, t_lo, t_hi)


def sample_measure(flow: FlowSystem, descriptor, N: int, seed: int) -> EmpiricalMeasure:
    """Draw ``N`` equal-weight samples described by ``descriptor``.

    ``descriptor`` is a mapping with a ``kind`` key:

    - ``lebesgue-torus``: uniform coordinates;
    - ``bernoulli-suspension`` with ``p``: i.i.d. symbols times a uniform roof;
    - ``dirac`` with ``point``: ``N`` copies of one point;
    - ``custom`` with ``points`` and optional ``weights``.
    """
    if isinstance(descriptor, str):
        descriptor = {"kind": descriptor}
    kind = descriptor.get("kind")
    if kind == "custom":
        pts = list(descriptor["points"])
        flow.check(*pts)
        w = np.asarray(descriptor.get("weights", np.ones(len(pts))), dtype=np.float64)
        return EmpiricalMeasure(flow, dict(descriptor), int(seed), _ListStore(pts), w / w.sum())
    if N < 1:
        raise ValueError("N must be at least 1")
    rng = substream(seed, "measure")
    if kind == "lebesgue-torus":
        if flow.family != "torus":
            raise ValueError("lebesgue-torus needs the torus flow")
        store = _TorusStore(rng.random((N, 2)))
    elif kind == "bernoulli-suspension":
        if flow.family != "suspension":
            raise ValueError("bernoulli-suspension needs the suspension flow")
        probs = check_probs(descriptor["p"])
        if len(probs) != flow.alphabet_size:
            raise ValueError("p must have one entry per symbol of the alphabet")
        seeds = rng.integers(0, 2 ** 64, size=N, dtype=np.uint64)
        store = _BernoulliStore(seeds, np.zeros(N, np.int64), rng.random(N), probs)
    elif kind == "dirac":
        x = descriptor["point"]
        flow.check(x)
        store = _ListStore([x] * N)
    else:
        raise ValueError(f"unknown measure kind {kind!r}")
    return EmpiricalMeasure(flow, dict(descriptor), int(seed), store, np.full(N, 1.0 / N))


def pushforward(mu: EmpiricalMeasure, flow: FlowSystem, t: float) -> EmpiricalMeasure:
    desc = dict(mu.descriptor)
    desc["pushed"] = float(desc.get("pushed", 0.0)) + float(t)
    if desc.get("kind") == "dirac":
        desc["point"] = flow_map(flow, desc["point"], t)
    return EmpiricalMeasure(flow, desc, mu.seed, mu.store.push(flow, t), mu.weights)


# ----------------------------------------------------------- ball masses


@dataclass(frozen=True)
class MassProfile:
    """Ball masses around one center along a horizon grid."""

    t: np.ndarray
    mass: np.ndarray
    count: np.ndarray
    n_eff: float

    @property
    def stderr(self) -> np.ndarray:
        m = self.mass
        return np.sqrt(m * (1.0 - m) / self.n_eff)


def member_rows(mu: EmpiricalMeasure, flow: FlowSystem, center: PhasePoint, eps: float,
                alpha: float, horizon: float, step: float, q: int, side: str = "forward",
                kind: str = "generalized"):
    """Per-sample deepest row reached (forward, backward), and the lattice used."""
    flow.check(center)
    lat = Lattice.for_query(flow, eps, alpha, horizon, step, q, kind)
    two = side == "two-sided"
    fwd, bwd = membership_rows(flow, center, mu.atom_cloud, lat, two)
    _, inv = mu.atoms
    fwd, bwd = fwd[inv], bwd[inv]
    depth = np.minimum(fwd, bwd) if two else fwd
    return depth, lat


def mass_profile(mu: EmpiricalMeasure, flow: FlowSystem, center: PhasePoint, eps: float,
                 alpha: float, t_grid: Sequence[float], step: float, q: int = 4,
                 side: str = "forward", kind: str = "generalized",
                 exclude: Optional[int] = None) -> MassProfile:
    """Masses of the balls around ``center`` for every horizon in ``t_grid``.

    One alignment per sample up to ``max(t_grid)`` answers every horizon.
    ``exclude`` drops one sample (the center itself when it was drawn from
    ``mu``) and renormalizes the remaining weights.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    depth, lat = member_rows(mu, flow, center, eps, alpha, float(t_grid.max()), step, q,
                             side, kind)
    w = np.array(mu.weights)
    keep = np.ones(len(mu), bool)
    if exclude is not None:
        keep[exclude] = False
    total = w[keep].sum()
    wsq = (w[keep] ** 2).sum()
    mass = np.empty(t_grid.size)
    count = np.empty(t_grid.size, np.int64)
    for k, t in enumerate(t_grid):
        inside = keep & (depth >= steps_in(t, step))
        mass[k] = min(1.0, w[inside].sum() / total)
        count[k] = int(inside.sum())
    return MassProfile(t_grid, mass, count, total ** 2 / wsq)


def ball_mass(mu: EmpiricalMeasure, flow: FlowSystem, query: BallQuery, step: float,
              q: int = 4, exclude: Optional[int] = None) -> float:
    """Weighted fraction of samples inside the ball described by ``query``."""
    prof = mass_profile(mu, flow, query.center, query.eps, query.alpha, [query.horizon],
                        step, q, query.side, query.kind, exclude)
    return float(prof.mass[0])


# ------------------------------------------------------------------ scans


def fit_decay(t, neglog) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2 of ``neglog`` against ``t``."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(neglog, dtype=np.float64)
    if t.size < 2:
        return math.nan, math.nan, math.nan
    A = np.column_stack([t, np.ones_like(t)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float(((y - A @ np.array([slope, icpt])) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return float(slope), float(icpt), r2


@dataclass
class ScanSummary:
    eps: float
    rate: float
    r2: float
    verdict: str
    floor: float
    t_fit: tuple


@dataclass
class ScanReport:
    """Masses per ``(eps, t, center)`` plus a fitted verdict per ``eps``."""

    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    centers: list = field(default_factory=list)
    n_eff: float = 0.0

    def verdict(self, eps: float) -> ScanSummary:
        for s in self.summary:
            if s.eps == eps:
                return s
        raise KeyError(eps)

    def masses(self, eps: float) -> np.ndarray:
        """``(center, t)`` mass matrix for one radius."""
        sel = [r for r in self.rows if r[0] == eps]
        ts = sorted({r[1] for r in sel})
        cs = sorted({r[2] for r in sel})
        out = np.empty((len(cs), len(ts)))
        for e, t, c, m, _, _ in sel:
            out[cs.index(c), ts.index(t)] = m
        return out

    def monotonicity_violations(self) -> list:
        """Rows breaking monotonicity in eps or antitonicity in t."""
        bad = []
        epss = sorted({r[0] for r in self.rows})
        mats = [self.masses(e) for e in epss]
        for e, m in zip(epss, mats):
            if np.any(np.diff(m, axis=1) > 0):
                bad.append(("t", e))
        for (e1, m1), (e2, m2) in zip(zip(epss, mats), zip(epss[1:], mats[1:])):
            if np.any(m2 < m1):
                bad.append(("eps", e1, e2))
        return bad

    def write_csv(self, path, summary_path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["epsilon", "t", "center_id", "mass", "stderr"])
            for e, t, c, m, se, _ in self.rows:
                wr.writerow([repr(e), repr(t), c, repr(m), repr(se)])
        with open(summary_path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["epsilon", "rate", "r2", "verdict", "floor"])
            for s in self.summary:
                wr.writerow([repr(s.eps), repr(s.rate), repr(s.r2), s.verdict, repr(s.floor)])


def draw_centers(mu: EmpiricalMeasure, count: int, seed: int) -> np.ndarray:
    """Distinct sample indices drawn from ``mu`` on the ``centers`` sub-stream."""
    rng = substream(seed, "centers")
    count = min(count, len(mu))
    return np.sort(rng.choice(len(mu), size=count, replace=False, p=np.array(mu.weights)))


def expansivity_scan(flow: FlowSystem, mu: EmpiricalMeasure, eps_grid, t_grid,
                     center_count: int, step: float, q: int = 4, seed: int = 0,
                     side: str = "forward", kind: str = "generalized", rho_min: float = 0.1,
                     r2_min: float = 0.9, min_count: int = 3) -> ScanReport:
    """Decay-versus-floor classification of ball masses with ``alpha = eps``.

    Centers are samples of ``mu`` (each excluded from its own ball). For every
    radius the decay rate is the common slope of ``-log(mass)`` against ``t``
    (see :func:`pooled_decay`). A center contributes the prefix of ``t_grid``
    on which its ball still holds ``min_count`` samples. The radius is labeled ``decaying`` when that rate exceeds ``rho_min`` with
    ``R^2 >= r2_min``, and ``floored`` otherwise; the floor is the mean mass
    at the largest horizon.
    """
    eps_grid = sorted(float(e) for e in eps_grid)
    t_grid = np.asarray(sorted(float(t) for t in t_grid))
    if not eps_grid or t_grid.size == 0:
        raise ValueError("eps and t grids must be nonempty")
    centers = draw_centers(mu, center_count, seed)
    report = ScanReport(centers=centers.tolist())
    for eps in eps_grid:
        alpha = min(eps, 1.0 - 1e-9)
        profiles = []
        for cid, idx in enumerate(centers):
            prof = mass_profile(mu, flow, mu.point(idx), eps, alpha, t_grid, step, q, side,
                                kind, exclude=int(idx) if len(mu) > 1 else None)
            profiles.append(prof)
            report.n_eff = prof.n_eff
            for t, m, se, c in zip(prof.t, prof.mass, prof.stderr, prof.count):
                report.rows.append((eps, float(t), cid, float(m), float(se), int(c)))
        report.summary.append(_summarize(eps, t_grid, profiles, rho_min, r2_min, min_count))
    return report


def pooled_decay(t, neglog, valid) -> tuple[float, float, int]:
    """Common slope of ``neglog`` rows against ``t`` with one intercept per row.

    Only ``valid`` cells enter the fit. Returns ``(slope, r2, cells)``. The
    ``r2`` belongs to the center-averaged curve: every row is shifted by its
    own intercept, the shifted rows are averaged per ``t``, and the common
    line is scored against that average. Averaging first keeps the
    staircase shape of single-center curves from masking a clean mean decay.
    """
    t = np.asarray(t, dtype=np.float64)
    neglog = np.asarray(neglog, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool) & np.isfinite(neglog)
    rows = valid.sum(axis=1) >= 2
    if not rows.any():
        return math.nan, math.nan, 0
    y, ok = neglog[rows], valid[rows]
    tbar = np.array([t[m].mean() for m in ok])
    ybar = np.array([r[m].mean() for r, m in zip(y, ok)])
    tc = np.where(ok, t[None, :] - tbar[:, None], 0.0)
    yc = np.where(ok, y - ybar[:, None], 0.0)
    den = float((tc * tc).sum())
    if den == 0:
        return math.nan, math.nan, 0
    slope = float((tc * yc).sum()) / den
    icpt = ybar - slope * tbar
    n_t = ok.sum(axis=0)
    cols = n_t > 0
    mean_curve = np.where(ok, y - icpt[:, None], 0.0).sum(axis=0)[cols] / n_t[cols]
    resid = mean_curve - slope * t[cols]
    ss_tot = float(((mean_curve - mean_curve.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 0.0
    return slope, r2, int(ok.sum())


def _summarize(eps, t_grid, profiles, rho_min, r2_min, min_count) -> ScanSummary:
    counts = np.array([p.count for p in profiles])
    masses = np.array([p.mass for p in profiles])
    # each center contributes the prefix of horizons where its ball holds min_count samples
    valid = np.cumprod(counts >= min_count, axis=1).astype(bool)
    with np.errstate(divide="ignore"):
        neglog = -np.log(masses)
    rate, r2, _ = pooled_decay(t_grid, neglog, valid)
    decaying = math.isfinite(rate) and rate > rho_min and r2 >= r2_min
    floor = float(masses[:, -1].mean())
    used = valid.any(axis=0)
    fit_range = (float(t_grid[used][0]), float(t_grid[used][-1])) if used.any() else ()
    return ScanSummary(eps, rate, r2, "decaying" if decaying else "floored", floor, fit_range)


# ------------------------------------------------------------ orbit tubes


@dataclass(frozen=True)
class TubeCheck:
    theta: float
    offsets: np.ndarray
    inside: np.ndarray
    first_exit: np.ndarray


def tube_inclusion_check(flow: FlowSystem, x: PhasePoint, delta: float, horizon: float,
                         step: float, arc_samples: int = 21, offsets=None,
                         theta: Optional[float] = None) -> TubeCheck:
    """Check that short orbit arcs through ``x`` stay in its forward ``delta``-ball.

    Arc samples are ``y = phi_s(x)`` for ``s`` evenly spaced in
    ``[-theta, theta]`` (or the given ``offsets``), with ``theta`` from
    :func:`theta_for`. A sample is inside when ``d(phi_t x, phi_t y) <= delta``
    at every grid time ``t`` in ``[0, horizon]``; ``first_exit`` records the
    first failing time (NaN when none).
    """
    flow.check(x)
    if theta is None:
        theta = theta_for(flow, delta)
    s = (np.linspace(-theta, theta, arc_samples) if offsets is None
         else np.asarray(offsets, dtype=np.float64))
    ts = np.arange(steps_in(horizon, step) + 1) * step
    arcs = [flow_map(flow, x, float(v)) for v in s]
    span = float(np.abs(s).max()) + horizon + 1.0
    cloud = Cloud.of(flow, [x] + arcs, -span, span)
    a, b, w = kernel_args(flow)
    inside = np.ones(s.size, bool)
    exit_t = np.full(s.size, np.nan)
    n = ts.size
    for k in range(s.size):
        d = K.pair_dists(cloud.family, np.repeat(cloud.F[:1], n, 0), np.repeat(cloud.C[:1], n),
                         np.repeat(cloud.S[:1], n, 0), ts, np.repeat(cloud.F[k + 1:k + 2], n, 0),
                         np.repeat(cloud.C[k + 1:k + 2], n), np.repeat(cloud.S[k + 1:k + 2], n, 0),
                         ts, a, b, w)
        bad = np.flatnonzero(d > delta)
        if bad.size:
            inside[k] = False
            exit_t[k] = ts[bad[0]]
    return TubeCheck(float(theta), s, inside, exit_t)
