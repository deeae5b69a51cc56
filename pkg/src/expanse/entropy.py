"""Entropy estimators and the signature-based cover of generalized balls.

* :func:`katok_entropy` counts greedy covers by Bowen balls of the time-one
  map and reads the entropy off the growth of the cover size.
* :func:`brin_katok_curve` follows the mass of shrinking forward
  generalized balls around one center.
* :func:`cover_generalized_ball` groups the members of a finite-time
  generalized ball by the quantized drift of their alignment warps and
  certifies that each group fits in one Bowen ball.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .flows import Cloud, FlowSystem, PhasePoint, kernel_args, theta_for
from .measures import (EmpiricalMeasure, draw_centers, fit_decay, mass_profile, pooled_decay,
                       sample_measure)
from .reparam import GammaSignature, Warp, gamma_signature
from .warp_align import BallQuery, ball_membership

# ------------------------------------------------------------------ Katok


@dataclass
class EntropyEstimate:
    delta: float
    N: int
    seed: int
    step: float
    n_grid: np.ndarray
    eps_grid: list
    counts: dict = field(default_factory=dict)
    rates: dict = field(default_factory=dict)
    fit_ranges: dict = field(default_factory=dict)

    def log_counts(self, eps: float) -> np.ndarray:
        return np.log(self.counts[eps])

    @property
    def summary(self) -> dict:
        """Rate curve over the radius grid (the small-radius end last)."""
        eps = sorted(self.eps_grid, reverse=True)
        rates = [self.rates[e] for e in eps]
        return {"eps": eps, "rates": rates, "smallest_eps_rate": rates[-1],
                "spread": float(np.nanmax(rates) - np.nanmin(rates))}

    def write_csv(self, path, summary_path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["epsilon", "n", "S", "log_S"])
            for e in self.eps_grid:
                for n, S in zip(self.n_grid, self.counts[e]):
                    wr.writerow([repr(e), int(n), int(S), repr(float(np.log(S)))])
        with open(summary_path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["epsilon", "rate", "n_lo", "n_hi"])
            for e in self.eps_grid:
                lo, hi = self.fit_ranges[e]
                wr.writerow([repr(e), repr(self.rates[e]), lo, hi])


def _integer_weights(mu: EmpiricalMeasure) -> np.ndarray:
    first, inv = mu.atoms
    w = np.bincount(inv, minlength=first.size).astype(np.int64)
    if not np.allclose(mu.weights, mu.weights[0], rtol=0, atol=1e-15):
        raise ValueError("greedy covers need equally weighted samples")
    return w


def katok_fit_range(n_grid, counts, target: int, saturation: float) -> np.ndarray:
    """Indices of the grid used for the rate fit.

    Cover sizes stop growing exponentially once the balls hold only a few
    samples each. The fit keeps the prefix of the grid on which the cover
    size is at most ``saturation * target``, and at least two points.
    """
    ok = np.asarray(counts) <= saturation * target
    stop = int(np.argmin(ok)) if not ok.all() else ok.size
    return np.arange(max(stop, min(2, len(n_grid))))


def katok_entropy(flow: FlowSystem, mu, delta: float, eps_grid, n_grid, N: Optional[int] = None,
                  seed: int = 0, step: float = 1.0, saturation: float = 0.1) -> EntropyEstimate:
    """Greedy Katok covers by ``(n, eps, phi_1)``-balls centered at samples.

    Parameters
    ----------
    mu : EmpiricalMeasure or descriptor
        A descriptor is sampled with ``N`` points and ``seed``.
    delta : float
        Mass left uncovered; the last ``ceil(delta N)`` samples reached by
        the greedy pass are dropped.
    n_grid : increasing integers
        Numbers of iterates of the time-``step`` map (``step=1`` is ``phi_1``).
    saturation : float
        Fit only while covers use at most this fraction of the kept samples.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    n_grid = np.asarray(n_grid, dtype=np.int64)
    if n_grid.size < 2 or np.any(np.diff(n_grid) <= 0) or n_grid[0] < 0:
        raise ValueError("n_grid must hold at least two increasing nonnegative integers")
    if not isinstance(mu, EmpiricalMeasure):
        mu = sample_measure(flow, mu, N, seed)
    N = len(mu)
    weights = _integer_weights(mu)
    target = N - math.ceil(delta * N)
    nmax = int(n_grid[-1])
    cloud = mu.atom_cloud(0.0, nmax * step + 1.0)
    a, b, w = kernel_args(flow)
    est = EntropyEstimate(float(delta), N, int(seed), float(step), n_grid,
                          sorted(float(e) for e in eps_grid))
    for eps in est.eps_grid:
        P, Q, L = K.bowen_pairs(cloud.family, cloud.F, cloud.C, cloud.S, a, b, w, eps,
                                float(step), nmax, int(n_grid[0]))
        S = np.array([K.greedy_cover(weights, P, Q, L, int(n), target)[0] for n in n_grid])
        del P, Q, L
        idx = katok_fit_range(n_grid, S, target, saturation)
        rate, _, _ = fit_decay(n_grid[idx] * step, np.log(S[idx]))
        est.counts[eps] = S
        est.rates[eps] = rate
        est.fit_ranges[eps] = (int(n_grid[idx[0]]), int(n_grid[idx[-1]]))
    rates = [est.rates[e] for e in est.eps_grid]
    if any(r2 > r1 + 1e-12 for r1, r2 in zip(rates, rates[1:])):
        warnings.warn("Katok rate increases with eps; greedy covers are approximate",
                      RuntimeWarning, stacklevel=2)
    return est


# ------------------------------------------------------------ Brin-Katok


@dataclass
class BKCurve:
    t: np.ndarray
    mass: np.ndarray
    count: np.ndarray
    censored: np.ndarray
    slope: float
    r2: float

    @property
    def local_rate(self) -> np.ndarray:
        """``-log(mass)/t`` (NaN at ``t = 0`` and where censored)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            r = -np.log(self.mass) / self.t
        return np.where(self.censored | (self.t == 0), np.nan, r)


def brin_katok_curve(flow: FlowSystem, mu: EmpiricalMeasure, x: PhasePoint, eps: float,
                     t_grid, step: float, q: int = 4, exclude: Optional[int] = None,
                     min_count: int = 1) -> BKCurve:
    """Masses of forward generalized balls (``alpha = eps``) around ``x``.

    Masses resting on fewer than ``min_count`` samples (by default: below
    ``1/N``) are censored; the slope of ``-log(mass)`` against ``t`` is
    fitted on the uncensored prefix.
    """
    prof = mass_profile(mu, flow, x, eps, min(eps, 1 - 1e-9), t_grid, step, q,
                        "forward", "generalized", exclude)
    censored = ~np.cumprod(prof.count >= min_count).astype(bool)
    ok = ~censored
    with np.errstate(divide="ignore"):
        slope, _, r2 = fit_decay(prof.t[ok], -np.log(prof.mass[ok]))
    return BKCurve(prof.t, prof.mass, prof.count, censored, slope, r2)


@dataclass
class BKRate:
    eps: float
    rate: float
    r2: float
    centers: list
    curves: list


def brin_katok_rate(flow: FlowSystem, mu: EmpiricalMeasure, eps: float, t_grid, step: float,
                    q: int = 4, center_count: int = 32, seed: int = 0,
                    min_count: int = 3) -> BKRate:
    """Common decay slope of the Brin-Katok curves of centers drawn from ``mu``."""
    centers = draw_centers(mu, center_count, seed)
    curves = [brin_katok_curve(flow, mu, mu.point(c), eps, t_grid, step, q,
                               exclude=int(c) if len(mu) > 1 else None, min_count=min_count)
              for c in centers]
    with np.errstate(divide="ignore"):
        neglog = np.array([-np.log(c.mass) for c in curves])
    valid = np.array([~c.censored for c in curves])
    rate, r2, _ = pooled_decay(np.asarray(t_grid, dtype=np.float64), neglog, valid)
    return BKRate(float(eps), rate, r2, centers.tolist(), curves)


# ----------------------------------------------------------------- covers


@dataclass
class CoverResult:
    centers: list
    signatures: list
    count: int
    bound: int
    covered_fraction: float
    member_signatures: list
    failures: list
    alpha: float
    theta: float
    n: int

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["representative", "signature", "members", "verified"])
            for c, sig in zip(self.centers, self.signatures):
                group = [i for i, s in enumerate(self.member_signatures) if s == sig]
                bad = sum(1 for i, _ in self.failures if i in group)
                wr.writerow([c, str(sig), len(group), len(group) - bad])


def cover_parameters(flow: FlowSystem, eps: float, L: float, theta: Optional[float] = None):
    """``(theta, alpha)`` with ``alpha = min(theta / (3L), eps / 6)``."""
    if theta is None:
        theta = theta_for(flow, eps / 6.0)
    return theta, min(theta / (3.0 * L), eps / 6.0)


def anchored_witness(flow: FlowSystem, x: PhasePoint, y: PhasePoint, delta: float,
                     alpha: float, t: float, step: float, q: int) -> Optional[Warp]:
    """Warp ``g`` in Rep(alpha) with ``d(phi_s y, phi_{g(s)} x) <= delta`` on ``[0, t]``."""
    v = ball_membership(flow, y, x, BallQuery(y, delta, alpha, t), step, q)
    return v.witness if v.feasible else None


def bowen_gap(flow: FlowSystem, y: PhasePoint, z: PhasePoint, iterates: int,
              step: float = 1.0) -> float:
    """``max_{0 <= i <= iterates} d(phi_{i step} y, phi_{i step} z)``."""
    times = np.arange(iterates + 1) * step
    cloud = Cloud.of(flow, [y, z], 0.0, float(times[-1]))
    a, b, w = kernel_args(flow)
    n = times.size
    d = K.pair_dists(cloud.family, np.repeat(cloud.F[:1], n, 0), np.repeat(cloud.C[:1], n),
                     np.repeat(cloud.S[:1], n, 0), times, np.repeat(cloud.F[1:], n, 0),
                     np.repeat(cloud.C[1:], n), np.repeat(cloud.S[1:], n, 0), times, a, b, w)
    return float(d.max())


def cover_generalized_ball(flow: FlowSystem, x: PhasePoint, delta: float, t: float, eps: float,
                           L: float, member_samples: Sequence[PhasePoint], step: float,
                           q: int, witnesses: Optional[Sequence[Warp]] = None,
                           theta: Optional[float] = None) -> CoverResult:
    """Cover the members of a forward generalized ball by Bowen balls.

    Each member ``y`` carries a warp ``g`` aligning its orbit with the orbit
    of ``x`` (``d(phi_s y, phi_{g(s)} x) <= delta``). Members are grouped by
    the signature ``floor((g(kL) - kL) / (alpha L))``, ``k < n = floor(t/L)``;
    the first member of each group is its representative, and every member
    is re-checked against its representative at the times ``0, 1, ..., nL``.

    Raises
    ------
    ValueError
        If a member admits no aligning warp (it is not in the ball).
    """
    theta, alpha = cover_parameters(flow, eps, L, theta)
    n = int(math.floor(t / L + 1e-9))
    if n < 1:
        raise ValueError("horizon shorter than one block")
    sigs = []
    for i, y in enumerate(member_samples):
        g = witnesses[i] if witnesses is not None else anchored_witness(
            flow, x, y, delta, alpha, t, step, q)
        if g is None:
            raise ValueError(f"member {i} is not in the ball")
        sigs.append(gamma_signature(g, L, alpha, n))
    reps = {}
    for i, s in enumerate(sigs):
        reps.setdefault(s, i)
    iterates = int(math.floor(n * L + 1e-9))
    failures = []
    for i, (y, s) in enumerate(zip(member_samples, sigs)):
        z = member_samples[reps[s]]
        if i != reps[s] and not bowen_gap(flow, y, z, iterates) <= eps:
            failures.append((i, s))
    m = len(member_samples)
    return CoverResult(list(reps.values()), list(reps.keys()), len(reps), 3 ** (n - 1),
                       (m - len(failures)) / m if m else 1.0, sigs, failures, alpha, theta, n)


def local_candidates(flow: FlowSystem, x: PhasePoint, radius: float, t: float, count: int,
                     seed: int, margin: int = 8):
    """Points near ``x`` that shadow it over ``[0, t]`` up to a small time offset.

    Suspension candidates copy the symbols of ``x`` on
    ``[-margin, t + margin]`` around its current frame, take fresh i.i.d.
    symbols elsewhere and sit at a time offset in ``[-radius, radius]``.
    Torus candidates are offset along and across the flow by at most
    ``radius``. Membership must still be verified.
    """
    from .flows import (BernoulliSymbols, SplicedSymbols, SuspensionPoint, TorusPoint,
                        flow_map, substream)

    rng = substream(seed, "members")
    out = []
    if flow.family == "torus":
        a, b = flow.direction
        for c, wv in rng.uniform(-radius, radius, size=(count, 2)):
            out.append(TorusPoint(x.u + c * a - wv * b, x.v + c * b + wv * a))
        return out
    probs = (1.0 / flow.alphabet_size,) * flow.alphabet_size
    hi = int(math.ceil(t)) + margin
    for s, u in zip(rng.integers(0, 2 ** 63, size=count), rng.uniform(-radius, radius, count)):
        src = SplicedSymbols(x.source, BernoulliSymbols(int(s), probs),
                             x.offset - margin, x.offset + hi)
        out.append(flow_map(flow, SuspensionPoint(src, x.offset, x.roof), float(u)))
    return out


def ball_members(flow: FlowSystem, x: PhasePoint, delta: float, t: float, eps: float, L: float,
                 count: int, step: float, q: int, seed: int, rounds: int = 8):
    """``count`` verified members of the cover's generalized ball, with their warps.

    Candidates come from :func:`local_candidates` at radius ``delta / 2``;
    each one is kept only if :func:`anchored_witness` finds an aligning warp
    in Rep(alpha) at radius ``delta`` with the cover's ``alpha``.
    """
    _, alpha = cover_parameters(flow, eps, L)
    members, warps = [], []
    for r in range(rounds):
        for y in local_candidates(flow, x, delta / 2, t, count, seed + r):
            g = anchored_witness(flow, x, y, delta, alpha, t, step, q)
            if g is not None:
                members.append(y)
                warps.append(g)
                if len(members) == count:
                    return members, warps
    raise ValueError(f"found only {len(members)} of {count} ball members")
