"""Membership in generalized dynamical balls by slope-constrained alignment.

The center orbit is sampled on rows ``i * step`` and the candidate orbit on
columns ``j * step / q``. A warp is a lattice path ``j_0 = 0 < j_1 < ...``
whose per-row increments ``j_{i+1} - j_i`` lie in the step window of the
slope class; it is admissible when every visited cell is within the radius
minus the continuous-time slack.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .flows import Cloud, FlowSystem, PhasePoint, flow_map, grid_slack, kernel_args, steps_in
from .reparam import Warp

SIDES = ("forward", "two-sided")
KINDS = ("classic", "generalized")


@dataclass(frozen=True)
class BallQuery:
    center: PhasePoint
    eps: float
    alpha: float
    horizon: float
    side: str = "forward"
    kind: str = "generalized"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.horizon >= 0:
            raise ValueError("horizon must be nonnegative")
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")


@dataclass(frozen=True, eq=False)
class DistanceGrid:
    """``values[i, j] = d(phi_{i step} x, phi_{j step / q} y)``."""

    values: np.ndarray
    step: float = 1.0
    q: int = 1
    slack: float = 0.0
    diameter: float = np.inf

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class AlignmentVerdict:
    feasible: bool
    witness: Optional[Warp]
    achieved_sup: float
    slack: float
    step: float = 0.0
    q: int = 1

    def record(self) -> dict:
        w = self.witness
        return {
            "feasible": self.feasible,
            "achieved_sup": self.achieved_sup,
            "slack": self.slack,
            "step": self.step,
            "q": self.q,
            "witness_knots": [] if w is None else w.knots.tolist(),
            "witness_values": [] if w is None else w.values.tolist(),
        }


def step_window(alpha: Optional[float], q: int, max_slope: float = 4.0) -> tuple[int, int]:
    """Admissible column increments per row.

    ``alpha=None`` stands for the unconstrained class: any increasing path
    with slope at most ``max_slope``.
    """
    if alpha is None:
        return 1, max(1, int(math.floor(max_slope * q + 1e-9)))
    lo = max(1, int(math.ceil(q * (1.0 - alpha) - 1e-9)))
    hi = int(math.floor(q * (1.0 + alpha) + 1e-9))
    return lo, hi


def threshold(eps: float, slack: float, diameter: float) -> float:
    # every distance is at most the diameter, so large radii accept everything
    return math.inf if eps >= diameter else eps - slack


def _cols_for(t: float, step: float, q: int, reach: float) -> int:
    return int(math.floor(reach * steps_in(t, step) * q + 1e-9)) + 1


def build_grid(flow: FlowSystem, x: PhasePoint, y: PhasePoint, step: float, t: float,
               q: int = 4, alpha_max: float = 1.0, sign: float = 1.0) -> DistanceGrid:
    """Materialize the distance grid between the orbits of ``x`` and ``y``.

    Columns cover warp values up to ``(1 + alpha_max) t``. ``sign=-1`` samples
    both orbits backward in time.
    """
    if not step > 0 or q < 1 or t < 0:
        raise ValueError("need step > 0, q >= 1 and t >= 0")
    flow.check(x, y)
    rows = steps_in(t, step) + 1
    cols = _cols_for(t, step, q, 1.0 + alpha_max)
    reach = (1.0 + alpha_max) * t + step
    cloud = Cloud.of(flow, [x, y], -reach, reach)
    a, b, w = kernel_args(flow)
    vals = K.grid_fill(cloud.family, *cloud.row(0), *cloud.row(1), a, b, w,
                       float(step), float(step) / q, rows, cols, float(sign))
    vals.setflags(write=False)
    return DistanceGrid(vals, float(step), int(q), grid_slack(flow, step, alpha_max),
                        flow.diameter)


# ------------------------------------------------------------- grid DP


def _reach(ok: np.ndarray, lo: int, hi: int) -> np.ndarray:
    rows, cols = ok.shape
    reach = np.zeros_like(ok)
    reach[0, 0] = ok[0, 0]
    for i in range(1, rows):
        c = np.concatenate([[0], np.cumsum(reach[i - 1])])
        j = np.arange(cols)
        a = np.clip(j - hi, 0, cols)
        b = np.clip(j - lo + 1, 0, cols)
        reach[i] = ok[i] & (c[b] - c[a] > 0)
    return reach


def _coreach(ok: np.ndarray, lo: int, hi: int) -> np.ndarray:
    rows, cols = ok.shape
    co = np.zeros_like(ok)
    co[-1] = ok[-1]
    for i in range(rows - 2, -1, -1):
        c = np.concatenate([[0], np.cumsum(co[i + 1])])
        j = np.arange(cols)
        a = np.clip(j + lo, 0, cols)
        b = np.clip(j + hi + 1, 0, cols)
        co[i] = ok[i] & (c[b] - c[a] > 0)
    return co


def lattice_path(ok: np.ndarray, lo: int, hi: int) -> Optional[np.ndarray]:
    """Lexicographically smallest admissible path through ``ok`` cells, if any."""
    co = _coreach(ok, lo, hi) & _reach(ok, lo, hi)
    if not co[0, 0]:
        return None
    path = np.zeros(ok.shape[0], np.int64)
    for i in range(1, ok.shape[0]):
        cand = np.flatnonzero(co[i, path[i - 1] + lo: path[i - 1] + hi + 1])
        path[i] = path[i - 1] + lo + cand[0]
    return path


def path_warp(path, step: float, q: int, sign: float = 1.0) -> Warp:
    path = np.asarray(path)
    if path.size == 1:
        return Warp.identity(step) if sign > 0 else Warp([-step, 0.0], [-step, 0.0])
    knots = np.arange(path.size, dtype=np.float64) * step
    values = path * (step / q)
    if sign < 0:
        return Warp(-knots[::-1], -values[::-1])
    return Warp(knots, values)


def feasible(D: DistanceGrid, eps: float, alpha: Optional[float],
             max_slope: float = 4.0) -> AlignmentVerdict:
    """Decide whether an admissible warp keeps every visited cell within ``eps``."""
    lo, hi = step_window(alpha, D.q, max_slope)
    thr = threshold(eps, D.slack, D.diameter)
    path = lattice_path(D.values <= thr, lo, hi)
    if path is None:
        return AlignmentVerdict(False, None, math.inf, D.slack, D.step, D.q)
    sup = float(D.values[np.arange(D.rows), path].max())
    return AlignmentVerdict(True, path_warp(path, D.step, D.q), sup, D.slack, D.step, D.q)


def enumerate_feasible(D: DistanceGrid, eps: float, alpha: Optional[float],
                       max_slope: float = 4.0) -> bool:
    """Exhaustive oracle: try every admissible lattice path."""
    lo, hi = step_window(alpha, D.q, max_slope)
    thr = threshold(eps, D.slack, D.diameter)
    vals = D.values
    if not vals[0, 0] <= thr:
        return False
    for steps in itertools.product(range(lo, hi + 1), repeat=D.rows - 1):
        cols = np.cumsum((0,) + steps)
        if cols[-1] >= D.cols:
            continue
        if all(vals[i, c] <= thr for i, c in enumerate(cols)):
            return True
    return False


def min_eps(D: DistanceGrid, alpha: Optional[float], max_slope: float = 4.0) -> float:
    """Smallest multiple of ``1e-4 * diameter`` at which ``D`` is feasible."""
    diam = D.diameter if math.isfinite(D.diameter) else float(D.values.max()) + D.slack
    res = 1e-4 * diam
    if feasible(D, 0.0, alpha, max_slope).feasible:
        return 0.0
    lo, hi = 0, int(math.ceil((D.values.max() + D.slack) / res)) + 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if feasible(D, mid * res, alpha, max_slope).feasible:
            hi = mid
        else:
            lo = mid
    return hi * res


# ------------------------------------------------------ orbit-level queries


@dataclass(frozen=True)
class Lattice:
    """Lattice geometry for a query: rows, columns, step window, threshold."""

    step: float
    q: int
    rows: int
    cols: int
    s_lo: int
    s_hi: int
    thr: float
    slack: float
    reach: float

    @classmethod
    def for_query(cls, flow: FlowSystem, eps: float, alpha: Optional[float], horizon: float,
                  step: float, q: int, kind: str = "generalized",
                  max_slope: float = 4.0) -> "Lattice":
        if not step > 0 or q < 1:
            raise ValueError("need step > 0 and q >= 1")
        if kind == "classic":
            s_lo = s_hi = q
        else:
            s_lo, s_hi = step_window(alpha, q, max_slope)
        bound = max_slope if alpha is None else 1.0 + alpha
        slack = grid_slack(flow, step, bound - 1.0 if alpha is None else alpha)
        rows = steps_in(horizon, step) + 1
        cols = (rows - 1) * s_hi + 1
        return cls(float(step), int(q), rows, cols, s_lo, s_hi,
                   threshold(eps, slack, flow.diameter), slack,
                   (rows - 1) * s_hi * step / q + step)

    def args(self):
        return (self.step, self.step / self.q, self.rows, self.cols, self.s_lo, self.s_hi,
                self.thr)


def _single(flow, x, y, lat: Lattice, sign: float):
    cloud = Cloud.of(flow, [x, y], -lat.reach, lat.reach)
    a, b, w = kernel_args(flow)
    last, lo, hi, path = K.band_dp(cloud.family, *cloud.row(0), *cloud.row(1), a, b, w,
                                   *lat.args(), sign, True)
    return last, path, cloud


def ball_membership(flow: FlowSystem, x: PhasePoint, y: PhasePoint, query: BallQuery,
                    step: float, q: int = 4) -> AlignmentVerdict:
    """Decide whether ``y`` lies in the ball described by ``query`` around ``x``."""
    flow.check(x, y)
    lat = Lattice.for_query(flow, query.eps, query.alpha, query.horizon, step, q, query.kind)
    signs = (1.0,) if query.side == "forward" else (1.0, -1.0)
    halves = []
    for sign in signs:
        last, path, cloud = _single(flow, x, y, lat, sign)
        if last != lat.rows - 1:
            return AlignmentVerdict(False, None, math.inf, lat.slack, lat.step, lat.q)
        halves.append((sign, path, cloud))
    sup = 0.0
    a, b, w = kernel_args(flow)
    for sign, path, cloud in halves:
        n = path.size
        ti = sign * np.arange(n) * lat.step
        tj = sign * path * (lat.step / lat.q)
        d = K.pair_dists(cloud.family, np.repeat(cloud.F[:1], n, 0), np.repeat(cloud.C[:1], n),
                         np.repeat(cloud.S[:1], n, 0), ti, np.repeat(cloud.F[1:], n, 0),
                         np.repeat(cloud.C[1:], n), np.repeat(cloud.S[1:], n, 0), tj, a, b, w)
        sup = max(sup, float(d.max()))
    fwd = halves[0][1]
    if len(halves) == 1:
        witness = path_warp(fwd, lat.step, lat.q)
    else:
        bwd = halves[1][1]
        knots = np.concatenate([-np.arange(bwd.size - 1, 0, -1), np.arange(fwd.size)]) * lat.step
        vals = np.concatenate([-bwd[:0:-1], fwd]) * (lat.step / lat.q)
        witness = Warp(knots, vals) if knots.size > 1 else Warp.identity(lat.step)
    return AlignmentVerdict(True, witness, sup, lat.slack, lat.step, lat.q)


def membership_rows(flow: FlowSystem, center: PhasePoint, cloud_of, lat: Lattice,
                    two_sided: bool) -> tuple[np.ndarray, np.ndarray]:
    """Last reachable row per sample (forward and backward) for a batch query.

    ``cloud_of(t_lo, t_hi)`` must return the candidate cloud materialized for
    that time window.
    """
    cloud = cloud_of(-lat.reach, lat.reach)
    xc = Cloud.of(flow, [center], -lat.reach, lat.reach)
    a, b, w = kernel_args(flow)
    return K.mass_rows(cloud.family, *xc.row(0), cloud.F, cloud.C, cloud.S, a, b, w,
                       *lat.args(), bool(two_sided))


# --------------------------------------------------- flow-level invariants


def endpoint_drift(flow: FlowSystem, x: PhasePoint, candidates, eps: float, T: float,
                   step: float, q: int, max_slope: float = 4.0) -> np.ndarray:
    """Range of ``h(T)/T - 1`` over all admissible unconstrained warps.

    Returns an ``(n, 2)`` array with the smallest and largest value per
    candidate, NaN where no warp keeps the candidate within ``eps`` up to ``T``.
    """
    lat = Lattice.for_query(flow, eps, None, T, step, q, max_slope=max_slope)
    cloud = Cloud.of(flow, candidates, -lat.reach, lat.reach)
    xc = Cloud.of(flow, [x], -lat.reach, lat.reach)
    a, b, w = kernel_args(flow)
    spans = K.endpoint_spans(cloud.family, *xc.row(0), cloud.F, cloud.C, cloud.S, a, b, w,
                             *lat.args())
    out = np.full((len(cloud), 2), np.nan)
    full = spans[:, 0] == lat.rows - 1
    Tg = (lat.rows - 1) * lat.step
    out[full, 0] = spans[full, 1] * (lat.step / q) / Tg - 1.0
    out[full, 1] = spans[full, 2] * (lat.step / q) / Tg - 1.0
    return out


def discover_forcing_eps(flow: FlowSystem, x: PhasePoint, candidates, alpha: float, T: float,
                         eps_grid, step: float, q: int, max_slope: float = 4.0):
    """Largest grid radius below which every admissible warp has ``|h(T)/T - 1| <= alpha``.

    Scans ``eps_grid`` from small to large and stops at the first radius with
    a violation. Returns ``(eps0, rows)`` where ``rows`` lists
    ``(eps, feasible_count, worst_drift)`` for each scanned radius.
    """
    rows = []
    eps0 = None
    for eps in sorted(eps_grid):
        drift = endpoint_drift(flow, x, candidates, eps, T, step, q, max_slope)
        ok = ~np.isnan(drift[:, 0])
        worst = float(np.nanmax(np.abs(drift))) if ok.any() else 0.0
        rows.append((float(eps), int(ok.sum()), worst))
        if worst > alpha:
            break
        eps0 = float(eps)
    return eps0, rows


def inclusion_radius(flow: FlowSystem, x: PhasePoint, candidates, eps: float, T: float,
                     delta_grid, step: float, q: int, max_slope: float = 4.0):
    """Largest grid radius ``delta`` whose unconstrained forward ball sits inside the
    ``alpha = eps`` generalized forward ball of radius ``eps`` (both up to ``T``).

    Checked on ``candidates`` only. Returns ``(delta0, rows)`` with rows
    ``(delta, members, included)``; ``delta0`` is None if even the smallest
    radius fails.
    """
    cloud_of = lambda lo, hi: Cloud.of(flow, candidates, lo, hi)  # noqa: E731
    target = Lattice.for_query(flow, eps, eps, T, step, q)
    inside = membership_rows(flow, x, cloud_of, target, False)[0] == target.rows - 1
    rows, delta0 = [], None
    for delta in sorted(delta_grid):
        lat = Lattice.for_query(flow, delta, None, T, step, q, max_slope=max_slope)
        member = membership_rows(flow, x, cloud_of, lat, False)[0] == lat.rows - 1
        rows.append((float(delta), int(member.sum()), int((member & inside).sum())))
        if np.any(member & ~inside):
            break
        delta0 = float(delta)
    return delta0, rows


def translate_pair(flow: FlowSystem, x: PhasePoint, y: PhasePoint, verdict: AlignmentVerdict,
                   row: int):
    """Shift a witnessed pair along its warp: ``(phi_s x, phi_{h(s)} y)`` with ``s = row*step``."""
    if not verdict.feasible:
        raise ValueError("translation needs a feasible verdict")
    s = row * verdict.step
    return flow_map(flow, x, s), flow_map(flow, y, float(verdict.witness(s)))
