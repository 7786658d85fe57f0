"""Exact integrals of observables against piecewise-constant densities.

Every supported observable has a closed-form antiderivative on the pieces
where its truncation indicator is constant, so cell averages (and hence Ulam
discretizations of observables) carry no quadrature error.
"""

import math

import numpy as np


def _g(u):
    # integral of -log t over [0, u]
    return u - u * math.log(u) if u > 0 else 0.0


def _base_integral(obs, u, w):
    if obs.kind == "log_distance":
        z = obs.params[0]
        if u >= z:
            return _g(w - z) - _g(u - z)
        return _g(z - u) - _g(z - w)
    if obs.kind == "affine":
        a, b = obs.params[:2]
        return a * (w * w - u * u) / 2.0 + b * (w - u)
    lo, hi = obs.params[:2]
    return max(0.0, min(w, hi) - max(u, lo))


def _breakpoints(obs):
    pts = []
    s, c = obs.scale, obs.shift
    if obs.kind == "log_distance":
        z = obs.params[0]
        pts.append(z)
        if obs.truncation is not None and s != 0:
            expo = -(obs.truncation[1] - c) / s
            if expo < 700:
                r = math.exp(expo)
                pts += [z - r, z + r]
    elif obs.kind == "affine":
        a, b = obs.params[:2]
        if obs.truncation is not None and s != 0 and a != 0:
            pts.append(((obs.truncation[1] - c) / s - b) / a)
    elif obs.kind == "indicator":
        pts += list(obs.params[:2])
    return pts


def lebesgue_integral(obs, a, b):
    """Integral of ``obs`` over [a, b] against Lebesgue measure."""
    if b <= a:
        return 0.0
    cuts = sorted({a, b, *[p for p in _breakpoints(obs) if a < p < b]})
    total = 0.0
    for u, w in zip(cuts[:-1], cuts[1:]):
        if w <= u:
            continue
        mid = 0.5 * (u + w)
        if obs.truncation is not None:
            v = obs.scale * float(obs.base(mid)) + obs.shift
            keep = v <= obs.truncation[1] if obs.truncation[0] == "le" else v > obs.truncation[1]
            if not keep:
                continue
        total += obs.scale * _base_integral(obs, u, w) + obs.shift * (w - u)
    return total


def interval_integral(obs, density, a, b):
    """Integral of ``obs`` over [a, b] against a piecewise-constant density."""
    e = density.edges
    total = 0.0
    for lo, hi, v in zip(e[:-1], e[1:], density.values):
        u, w = max(a, lo), min(b, hi)
        if w > u and v != 0:
            total += v * lebesgue_integral(obs, u, w)
    return total


def cell_averages(obs, density, edges):
    """mu-weighted average of ``obs`` on each cell [edges[i], edges[i+1]]."""
    out = np.empty(len(edges) - 1)
    for i in range(len(edges) - 1):
        mass = density.measure(edges[i], edges[i + 1])
        out[i] = interval_integral(obs, density, edges[i], edges[i + 1]) / mass if mass > 0 else 0.0
    return out
