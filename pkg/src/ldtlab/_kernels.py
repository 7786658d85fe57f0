"""Compiled trajectory kernels.

Every trial owns a counter-based stream keyed by ``(master_seed, trial,
attempt)``, so a trial's output never depends on which worker ran it or in
what order. Kernels write into caller-owned arrays at the trial's own index.
"""

import math

import numba as nb
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
TRIAL_MUL = np.uint64(0xD1B54A32D192ED03)
ONE = np.uint64(1)
INV_2_53 = 1.0 / 9007199254740992.0
INV_2_64 = 1.0 / 18446744073709551616.0

MAX_ATTEMPTS = 100

# interval modes
SYMBOLIC = 0
FLOAT_MAP = 1
IID = 2

# observable kinds for interval systems
OBS_LOG_DISTANCE = 1
OBS_AFFINE = 2
OBS_INDICATOR = 3

# truncation modes
TRUNC_NONE = 0
TRUNC_LE = 1
TRUNC_GT = 2

# below this a distance is logged directly instead of joining the running product
_TINY_DISTANCE = 1e-30
_PRODUCT_FLOOR = 1e-280


@nb.njit(inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(inline="always")
def stream_key(master_seed, trial, attempt):
    k = mix64(master_seed + GOLDEN)
    k = mix64(k ^ (np.uint64(trial) * TRIAL_MUL + ONE))
    return mix64(k + np.uint64(attempt) * GOLDEN)


@nb.njit(inline="always")
def draw_word(key, ctr):
    return mix64(key + GOLDEN * (ctr + ONE))


@nb.njit(inline="always")
def draw_uniform(key, ctr):
    return float(draw_word(key, ctr) >> np.uint64(11)) * INV_2_53


@nb.njit(inline="always")
def _search(cdf, u):
    # first j with u < cdf[j]; cdf[-1] is padded above 1
    j = 0
    while u >= cdf[j]:
        j += 1
    return j


@nb.njit(inline="always")
def _neumaier(acc, comp, v):
    tmp = acc + v
    if abs(acc) >= abs(v):
        comp += (acc - tmp) + v
    else:
        comp += (v - tmp) + acc
    return tmp, comp


@nb.njit(cache=True)
def stream_uniforms(master_seed, trial, attempt, count):
    """Expose the raw uniform stream of one trial (for tests and tooling)."""
    key = stream_key(np.uint64(master_seed), trial, attempt)
    out = np.empty(count)
    for i in range(count):
        out[i] = draw_uniform(key, np.uint64(i))
    return out


@nb.njit(nogil=True, cache=True)
def finite_batch(master_seed, lo, hi, init_cdf, row_cdf, values, n,
                 sums, first, last, paths):
    store = paths.shape[0] > 0
    for t in range(lo, hi):
        key = stream_key(master_seed, t, 0)
        ctr = np.uint64(0)
        s = _search(init_cdf, draw_uniform(key, ctr))
        ctr += ONE
        first[t] = s
        acc = 0.0
        comp = 0.0
        for k in range(n):
            if k > 0:
                s = _search(row_cdf[s], draw_uniform(key, ctr))
                ctr += ONE
            acc, comp = _neumaier(acc, comp, values[s])
            if store:
                paths[t - lo, k] = s
        last[t] = s
        sums[t] = acc + comp


@nb.njit(inline="always")
def _sample_density(u, edges, cdf):
    j = 0
    m = edges.shape[0] - 1
    while j < m - 1 and u >= cdf[j + 1]:
        j += 1
    width = cdf[j + 1] - cdf[j]
    x = edges[j] + (u - cdf[j]) / width * (edges[j + 1] - edges[j])
    if x > 1.0:
        x = 1.0
    return x


@nb.njit(inline="always")
def eval_observable(x, kind, p0, p1, scale, shift, tmode, tlevel):
    if kind == OBS_LOG_DISTANCE:
        base = -math.log(abs(x - p0))
    elif kind == OBS_AFFINE:
        base = p0 * x + p1
    else:
        base = 1.0 if (x >= p0 and x < p1) else 0.0
    v = scale * base + shift
    if tmode == TRUNC_LE:
        if not (v <= tlevel):
            v = 0.0
    elif tmode == TRUNC_GT:
        if not (v > tlevel):
            v = 0.0
    return v


@nb.njit(inline="always")
def _symbolic_log_trial(key, neg, z, n):
    # fast path: symbolic map, untruncated log-distance, no path storage
    ctr = np.uint64(0)
    hi_w = draw_word(key, ctr)
    lo_w = draw_word(key, ctr + ONE)
    ctr += np.uint64(2)
    used = 0
    flip = np.uint64(0)
    acc = 0.0
    comp = 0.0
    prod = 1.0
    x = 0.0
    x0 = float(hi_w) * INV_2_64
    for k in range(n):
        w = hi_w ^ flip
        x = float(w) * INV_2_64
        if x == z:
            return 0.0, x0, x, True
        if neg[int(w >> np.uint64(63))]:
            flip = ~flip
        hi_w = (hi_w << ONE) | (lo_w >> np.uint64(63))
        lo_w = lo_w << ONE
        used += 1
        if used == 64:
            lo_w = draw_word(key, ctr)
            ctr += ONE
            used = 0
        d = abs(x - z)
        if d < _TINY_DISTANCE:
            acc, comp = _neumaier(acc, comp, math.log(d))
        else:
            prod *= d
            if prod < _PRODUCT_FLOOR:
                acc, comp = _neumaier(acc, comp, math.log(prod))
                prod = 1.0
    return acc + comp + math.log(prod), x0, x, False


@nb.njit(nogil=True, cache=True)
def interval_batch(master_seed, lo, hi, mode, neg, breaks, slopes, intercepts,
                   dens_edges, dens_cdf, kind, p0, p1, scale, shift, tmode,
                   tlevel, n, sums, first, last, status, paths):
    store = paths.shape[0] > 0
    singular_kind = kind == OBS_LOG_DISTANCE
    product = singular_kind and tmode == TRUNC_NONE
    nbr = breaks.shape[0] - 1
    for t in range(lo, hi):
        done = False
        attempt = 0
        while not done and attempt < MAX_ATTEMPTS:
            key = stream_key(master_seed, t, attempt)
            if mode == SYMBOLIC and product and not store:
                logsum, x0, x, hit_z = _symbolic_log_trial(key, neg, p0, n)
                if hit_z:
                    attempt += 1
                    continue
                done = True
                sums[t] = -scale * logsum + n * shift
                first[t] = x0
                last[t] = x
                break
            ctr = np.uint64(0)
            hit_z = False
            # symbolic window: hi_w holds the next 64 binary digits
            hi_w = np.uint64(0)
            lo_w = np.uint64(0)
            used = 0
            flip = np.uint64(0)
            x = 0.0
            if mode == SYMBOLIC:
                hi_w = draw_word(key, ctr)
                ctr += ONE
                lo_w = draw_word(key, ctr)
                ctr += ONE
            else:
                x = _sample_density(draw_uniform(key, ctr), dens_edges, dens_cdf)
                ctr += ONE
            acc = 0.0
            comp = 0.0
            prod = 1.0
            x0 = 0.0
            for k in range(n):
                if mode == SYMBOLIC:
                    w = hi_w ^ flip
                    x = float(w) * INV_2_64
                    if neg[int(w >> np.uint64(63))]:
                        flip = ~flip
                    hi_w = (hi_w << ONE) | (lo_w >> np.uint64(63))
                    lo_w = lo_w << ONE
                    used += 1
                    if used == 64:
                        lo_w = draw_word(key, ctr)
                        ctr += ONE
                        used = 0
                elif k > 0:
                    if mode == IID:
                        x = _sample_density(draw_uniform(key, ctr), dens_edges, dens_cdf)
                        ctr += ONE
                if k == 0:
                    x0 = x
                if singular_kind and x == p0:
                    hit_z = True
                    break
                if store:
                    paths[t - lo, k] = x
                if product:
                    d = abs(x - p0)
                    if d < _TINY_DISTANCE:
                        acc, comp = _neumaier(acc, comp, math.log(d))
                    else:
                        prod *= d
                        if prod < _PRODUCT_FLOOR:
                            acc, comp = _neumaier(acc, comp, math.log(prod))
                            prod = 1.0
                else:
                    v = eval_observable(x, kind, p0, p1, scale, shift, tmode, tlevel)
                    acc, comp = _neumaier(acc, comp, v)
                if mode == FLOAT_MAP and k + 1 < n:
                    b = 0
                    while b < nbr - 1 and x >= breaks[b + 1]:
                        b += 1
                    x = slopes[b] * x + intercepts[b]
                    if x < 0.0:
                        x = 0.0
                    elif x > 1.0:
                        x = 1.0
            if hit_z:
                attempt += 1
                continue
            done = True
            if product:
                logsum = acc + comp + math.log(prod)
                sums[t] = -scale * logsum + n * shift
            else:
                sums[t] = acc + comp
            first[t] = x0
            last[t] = x
        status[t] = attempt if done else -1
