"""Compiled inner loops shared by every module.

Everything that evaluates the metric along orbits funnels through the
functions here, including the scalar ``distance`` and ``flow_map`` entry
points, so the vectorized and scalar paths agree bit for bit.

State convention for a single point inside a kernel:

* ``f``: float64[2]. Torus ``(u, v)``; suspension ``(roof, 0)``.
* ``c``: int64. Suspension column of sequence index 0 inside ``s``.
* ``s``: uint8[:]. Materialized symbol window (unused for the torus).
"""

import math

import numpy as np
from numba import config, njit, prange

# deterministic and always available; the TBB layer warns on old installs
config.THREADING_LAYER = "workqueue"

TORUS = 0
SUSPENSION = 1

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 2.0 ** -53


@njit(cache=True)
def splitmix64(x):
    x = x + _M1
    z = x
    z = (z ^ (z >> _S30)) * _M2
    z = (z ^ (z >> _S27)) * _M3
    return z ^ (z >> _S31)


@njit(cache=True)
def bernoulli_symbol(seed, idx, cum):
    h = splitmix64(seed ^ splitmix64(np.uint64(idx)))
    u = np.float64(h >> _S11) * _INV53
    k = 0
    while k < cum.shape[0] and u >= cum[k]:
        k += 1
    return k


@njit(cache=True, parallel=True)
def bernoulli_window(seeds, offsets, lo, width, cum):
    n = seeds.shape[0]
    out = np.empty((n, width), np.uint8)
    for i in prange(n):
        for c in range(width):
            out[i, c] = bernoulli_symbol(seeds[i], offsets[i] + lo + c, cum)
    return out


# ---------------------------------------------------------------- flow maps


@njit(cache=True)
def torus_at(u, v, a, b, t):
    nu = (u + t * a) % 1.0
    nv = (v + t * b) % 1.0
    if nu >= 1.0:
        nu = 0.0
    if nv >= 1.0:
        nv = 0.0
    return nu, nv


@njit(cache=True)
def roof_advance(r, t):
    total = r + t
    k = math.floor(total)
    nr = total - k
    if nr >= 1.0:
        nr = 0.0
        k += 1
    return k, nr


@njit(cache=True, parallel=True)
def torus_push(uv, a, b, t):
    out = np.empty_like(uv)
    for i in prange(uv.shape[0]):
        out[i, 0], out[i, 1] = torus_at(uv[i, 0], uv[i, 1], a, b, t)
    return out


@njit(cache=True, parallel=True)
def roof_push(roofs, offsets, t):
    nr = np.empty_like(roofs)
    no = np.empty_like(offsets)
    for i in prange(roofs.shape[0]):
        k, r = roof_advance(roofs[i], t)
        nr[i] = r
        no[i] = offsets[i] + k
    return nr, no


# ------------------------------------------------------------------ metrics


@njit(cache=True)
def torus_dist(u1, v1, u2, v2):
    du = abs(u1 - u2)
    du = min(du, 1.0 - du)
    dv = abs(v1 - v2)
    dv = min(dv, 1.0 - dv)
    return math.sqrt(du * du + dv * dv)


@njit(cache=True)
def shift_dist(sa, ca, sb, cb, w):
    if sa[ca] != sb[cb]:
        return 1.0
    p = 0.5
    for n in range(1, w + 1):
        if sa[ca - n] != sb[cb - n] or sa[ca + n] != sb[cb + n]:
            return p
        p *= 0.5
    return 0.0


@njit(cache=True)
def _blend(sa, ca, ra, sb, cb, rb, k, w):
    # shift part of the lifted comparison (sigma^k a at height ra - k, b at rb)
    m = 0.5 * (ra - k + rb)
    fl = math.floor(m)
    lam = m - fl
    d0 = shift_dist(sa, ca + k + fl, sb, cb + fl, w)
    if lam > 0.0:
        d1 = shift_dist(sa, ca + k + fl + 1, sb, cb + fl + 1, w)
        return (1.0 - lam) * d0 + lam * d1
    return d0


@njit(cache=True)
def susp_dist(sa, ca, ra, sb, cb, rb, w):
    if ra > rb:
        sa, ca, ra, sb, cb, rb = sb, cb, rb, sa, ca, ra
    best = np.inf
    for k in range(-1, 2):
        gap = abs(ra - k - rb)
        if gap >= best:
            continue
        v = max(_blend(sa, ca, ra, sb, cb, rb, k, w), gap)
        if v < best:
            best = v
    return best


@njit(cache=True)
def _shift_capped(sa, ca, sb, cb, cap):
    # exact value if the first mismatch is within cap, else the bound 2^-(cap+1)
    if sa[ca] != sb[cb]:
        return 1.0, True
    p = 0.5
    for n in range(1, cap + 1):
        if sa[ca - n] != sb[cb - n] or sa[ca + n] != sb[cb + n]:
            return p, True
        p *= 0.5
    return p, False


@njit(cache=True)
def susp_within(sa, ca, ra, sb, cb, rb, w, thr):
    """``susp_dist(...) <= thr`` without scanning deeper than ``thr`` needs.

    Shallow scans give bounds on the blended shift part; float products and
    sums are monotone, so a bound that settles the comparison settles it for
    the exact value too. Undecided cases fall back to the full scan.
    """
    if ra > rb:
        sa, ca, ra, sb, cb, rb = sb, cb, rb, sa, ca, ra
    cap = w
    if 0.0 < thr < 1.0:
        cap = min(w, int(math.ceil(-math.log2(thr))) + 6)
    for k in range(-1, 2):
        gap = abs(ra - k - rb)
        if gap > thr:
            continue
        m = 0.5 * (ra - k + rb)
        fl = math.floor(m)
        lam = m - fl
        d0, e0 = _shift_capped(sa, ca + k + fl, sb, cb + fl, cap)
        if lam > 0.0:
            d1, e1 = _shift_capped(sa, ca + k + fl + 1, sb, cb + fl + 1, cap)
            upper = (1.0 - lam) * d0 + lam * d1
            lower = (1.0 - lam) * (d0 if e0 else 0.0) + lam * (d1 if e1 else 0.0)
        else:
            upper = d0
            lower = d0 if e0 else 0.0
        if upper <= thr:
            return True
        if lower > thr:
            continue
        if _blend(sa, ca, ra, sb, cb, rb, k, w) <= thr:
            return True
    return False


@njit(cache=True)
def dist_at(fam, xf, xc, xs, tx, yf, yc, ys, ty, a, b, w):
    """Distance between phi_tx(x) and phi_ty(y)."""
    if fam == TORUS:
        u1, v1 = torus_at(xf[0], xf[1], a, b, tx)
        u2, v2 = torus_at(yf[0], yf[1], a, b, ty)
        return torus_dist(u1, v1, u2, v2)
    kx, rx = roof_advance(xf[0], tx)
    ky, ry = roof_advance(yf[0], ty)
    return susp_dist(xs, xc + kx, rx, ys, yc + ky, ry, w)


@njit(cache=True)
def within_at(fam, xf, xc, xs, tx, yf, yc, ys, ty, a, b, w, thr):
    if fam == TORUS:
        u1, v1 = torus_at(xf[0], xf[1], a, b, tx)
        u2, v2 = torus_at(yf[0], yf[1], a, b, ty)
        return torus_dist(u1, v1, u2, v2) <= thr
    kx, rx = roof_advance(xf[0], tx)
    ky, ry = roof_advance(yf[0], ty)
    return susp_within(xs, xc + kx, rx, ys, yc + ky, ry, w, thr)


@njit(cache=True, parallel=True)
def pair_dists(fam, F1, C1, S1, t1, F2, C2, S2, t2, a, b, w):
    n = F1.shape[0]
    out = np.empty(n)
    for i in prange(n):
        out[i] = dist_at(fam, F1[i], C1[i], S1[i], t1[i],
                         F2[i], C2[i], S2[i], t2[i], a, b, w)
    return out


@njit(cache=True, parallel=True)
def shift_profile(fam, F, C, S, times, shifts, a, b, w):
    """out[k] = max over points p, times t of d(phi_t p, phi_{t+shifts[k]} p)."""
    n = shifts.shape[0]
    out = np.zeros(n)
    for k in prange(n):
        m = 0.0
        for p in range(F.shape[0]):
            for t in times:
                d = dist_at(fam, F[p], C[p], S[p], t,
                            F[p], C[p], S[p], t + shifts[k], a, b, w)
                if d > m:
                    m = d
        out[k] = m
    return out


@njit(cache=True, parallel=True)
def grid_fill(fam, xf, xc, xs, yf, yc, ys, a, b, w, step, dh, rows, cols, sign):
    out = np.empty((rows, cols))
    for i in prange(rows):
        tx = sign * (i * step)
        for j in range(cols):
            out[i, j] = dist_at(fam, xf, xc, xs, tx, yf, yc, ys,
                                sign * (j * dh), a, b, w)
    return out


# ------------------------------------------------------- slope-banded DP


@njit(cache=True)
def _cell(flat, offs, spans, i, j):
    if j < spans[i, 0] or j > spans[i, 1]:
        return 0
    return flat[offs[i] + j - spans[i, 0]]


@njit(cache=True)
def band_dp(fam, xf, xc, xs, yf, yc, ys, a, b, w, step, dh, rows, cols,
            s_lo, s_hi, thr, sign, want_path):
    """Forward reachability over the lazily evaluated distance grid.

    Returns ``(last, lo, hi, path)``: the last row reached by some admissible
    path (-1 if the anchor cell fails), the reachable column span on that
    row, and, when ``want_path`` and every row is reached, the
    lexicographically smallest full path. Reachable cells are stored per
    row only inside that row's span.
    """
    path = np.full(rows if want_path else 0, -1, np.int64)
    if not within_at(fam, xf, xc, xs, 0.0, yf, yc, ys, 0.0, a, b, w, thr):
        return -1, 0, 0, path
    spans = np.zeros((rows, 2), np.int64)
    offs = np.zeros(rows + 1, np.int64)
    flat = np.zeros(64 if want_path else 1, np.uint8)
    prev = np.zeros(cols, np.uint8)
    cur = np.zeros(cols, np.uint8)
    pref = np.zeros(cols + 1, np.int64)
    prev[0] = 1
    flat[0] = 1
    offs[1] = 1
    lo = 0
    hi = 0
    last = 0
    for i in range(1, rows):
        nlo = lo + s_lo
        nhi = min(hi + s_hi, cols - 1)
        if nlo > nhi:
            break
        pref[lo] = 0
        for j in range(lo, hi + 1):
            pref[j + 1] = pref[j] + prev[j]
        tx = sign * (i * step)
        flo = -1
        fhi = -1
        for j in range(nlo, nhi + 1):
            a0 = max(j - s_hi, lo)
            a1 = min(j - s_lo, hi)
            if a0 > a1 or pref[a1 + 1] - pref[a0] == 0:
                continue
            if within_at(fam, xf, xc, xs, tx, yf, yc, ys, sign * (j * dh),
                         a, b, w, thr):
                cur[j] = 1
                if flo < 0:
                    flo = j
                fhi = j
        for j in range(lo, hi + 1):
            prev[j] = 0
        if flo < 0:
            break
        if want_path:
            need = offs[i] + fhi - flo + 1
            if need > flat.shape[0]:
                grown = np.zeros(max(2 * flat.shape[0], need), np.uint8)
                grown[:offs[i]] = flat[:offs[i]]
                flat = grown
            offs[i + 1] = need
        for j in range(flo, fhi + 1):
            prev[j] = cur[j]
            cur[j] = 0
            if want_path:
                flat[offs[i] + j - flo] = prev[j]
        lo = flo
        hi = fhi
        spans[i, 0] = lo
        spans[i, 1] = hi
        last = i
    if want_path and last == rows - 1:
        # mark co-reachable cells with 2, then walk the smallest columns
        for j in range(spans[last, 0], spans[last, 1] + 1):
            k = offs[last] + j - spans[last, 0]
            if flat[k]:
                flat[k] = 2
        for i in range(last - 1, -1, -1):
            for j in range(spans[i, 0], spans[i, 1] + 1):
                k = offs[i] + j - spans[i, 0]
                if flat[k]:
                    for s in range(s_lo, s_hi + 1):
                        if _cell(flat, offs, spans, i + 1, j + s) == 2:
                            flat[k] = 2
                            break
        path[0] = 0
        for i in range(1, rows):
            j0 = path[i - 1]
            for s in range(s_lo, s_hi + 1):
                if _cell(flat, offs, spans, i, j0 + s) == 2:
                    path[i] = j0 + s
                    break
    return last, lo, hi, path


@njit(cache=True, parallel=True)
def mass_rows(fam, xf, xc, xs, F, C, S, a, b, w, step, dh, rows, cols,
              s_lo, s_hi, thr, two_sided):
    """Last reachable row for every sample (forward, and backward if asked)."""
    n = F.shape[0]
    fwd = np.full(n, -1, np.int64)
    bwd = np.full(n, -1, np.int64)
    for p in prange(n):
        last, _, _, _ = band_dp(fam, xf, xc, xs, F[p], C[p], S[p], a, b, w,
                                step, dh, rows, cols, s_lo, s_hi, thr, 1.0, False)
        fwd[p] = last
        if two_sided and last >= 0:
            last, _, _, _ = band_dp(fam, xf, xc, xs, F[p], C[p], S[p], a, b, w,
                                    step, dh, rows, cols, s_lo, s_hi, thr, -1.0,
                                    False)
            bwd[p] = last
    return fwd, bwd


@njit(cache=True, parallel=True)
def endpoint_spans(fam, xf, xc, xs, F, C, S, a, b, w, step, dh, rows, cols,
                   s_lo, s_hi, thr):
    n = F.shape[0]
    out = np.full((n, 3), -1, np.int64)
    for p in prange(n):
        last, lo, hi, _ = band_dp(fam, xf, xc, xs, F[p], C[p], S[p], a, b, w,
                                  step, dh, rows, cols, s_lo, s_hi, thr, 1.0,
                                  False)
        out[p, 0] = last
        out[p, 1] = lo
        out[p, 2] = hi
    return out


# --------------------------------------------------- Bowen-ball incidence


@njit(cache=True)
def _depth(fam, F, C, S, p, q, a, b, w, eps, step, nlev):
    # largest level l <= nlev with the pair eps-close at times 0..l*step
    lev = 0
    while lev < nlev:
        t = (lev + 1) * step
        if not within_at(fam, F[p], C[p], S[p], t, F[q], C[q], S[q], t,
                         a, b, w, eps):
            break
        lev += 1
    return lev


@njit(cache=True, parallel=True)
def bowen_pairs(fam, F, C, S, a, b, w, eps, step, nlev, min_lev):
    """All pairs p < q lying in each other's Bowen ball up to level >= min_lev.

    Two passes (count, then fill) keep the output order fixed regardless of
    the thread schedule.
    """
    n = F.shape[0]
    counts = np.zeros(n + 1, np.int64)
    for p in prange(n):
        c = 0
        for q in range(p + 1, n):
            if within_at(fam, F[p], C[p], S[p], 0.0, F[q], C[q], S[q], 0.0,
                         a, b, w, eps):
                if min_lev == 0 or _depth(fam, F, C, S, p, q, a, b, w, eps,
                                          step, min_lev) >= min_lev:
                    c += 1
        counts[p + 1] = c
    offs = np.cumsum(counts)
    total = offs[n]
    P = np.empty(total, np.int32)
    Q = np.empty(total, np.int32)
    L = np.empty(total, np.int16)
    for p in prange(n):
        pos = offs[p]
        for q in range(p + 1, n):
            if within_at(fam, F[p], C[p], S[p], 0.0, F[q], C[q], S[q], 0.0,
                         a, b, w, eps):
                lev = _depth(fam, F, C, S, p, q, a, b, w, eps, step, nlev)
                if lev >= min_lev:
                    P[pos] = p
                    Q[pos] = q
                    L[pos] = lev
                    pos += 1
    return P, Q, L


@njit(cache=True)
def greedy_cover(weights, P, Q, L, level, target):
    """Greedy set cover of sample weight ``target`` by balls at ``level``.

    Returns the number of balls and the cover order of every sample
    (-1 for samples never covered before the target was met).
    """
    n = weights.shape[0]
    deg = np.zeros(n + 1, np.int64)
    for e in range(P.shape[0]):
        if L[e] >= level:
            deg[P[e] + 1] += 1
            deg[Q[e] + 1] += 1
    ptr = np.cumsum(deg)
    fill = ptr[:n].copy()
    adj = np.empty(ptr[n], np.int32)
    for e in range(P.shape[0]):
        if L[e] >= level:
            adj[fill[P[e]]] = Q[e]
            fill[P[e]] += 1
            adj[fill[Q[e]]] = P[e]
            fill[Q[e]] += 1
    gain = weights.astype(np.int64).copy()
    for v in range(n):
        for k in range(ptr[v], ptr[v + 1]):
            gain[v] += weights[adj[k]]
    covered = np.zeros(n, np.bool_)
    order = np.full(n, -1, np.int64)
    done = 0
    balls = 0
    while done < target:
        c = np.argmax(gain)
        balls += 1
        for k in range(ptr[c] - 1, ptr[c + 1]):
            v = c if k < ptr[c] else adj[k]
            if covered[v]:
                continue
            covered[v] = True
            order[v] = balls - 1
            wv = weights[v]
            done += wv
            gain[v] -= wv
            for kk in range(ptr[v], ptr[v + 1]):
                gain[adj[kk]] -= wv
    return balls, order
