"""Truncation of unbounded observables and the martingale decomposition.

An observable splits at level M into a bounded part phi * 1{phi <= M} and a
tail part phi * 1{phi > M}. For the log-distance observable under Lebesgue
measure the tail quantities have closed forms, which serve as oracles for the
empirical tail fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import BoundaryTooClose, DimensionMismatch, InsufficientTail, UnsolvedPoisson
from .operator import PoissonSolution, UlamOperator, power_sequence
from .systems import MarkovSystem, Observable, observable_mean

MIN_TAIL_SAMPLES = 50


@dataclass(frozen=True)
class TruncationPair:
    level_M: float
    bounded_part: Observable
    tail_part: Observable
    tail_mean: float

    def reconstruct(self, x):
        return self.bounded_part(x) + self.tail_part(x)


def decompose(observable: Observable, system: MarkovSystem, level_M: float) -> TruncationPair:
    if not level_M > 0:
        raise ValueError("level_M must be positive")
    lower = observable.with_truncation("le", level_M)
    upper = observable.with_truncation("gt", level_M)
    return TruncationPair(float(level_M), lower, upper, observable_mean(upper, system))


def log_distance_tail_length(z: float, t) -> np.ndarray:
    """Lebesgue length of {x in [0, 1] : |x - z| < e^-t}."""
    r = np.exp(-np.asarray(t, dtype=float))
    return np.minimum(r, z) + np.minimum(r, 1.0 - z)


def log_distance_survival(z: float, t, C_mu: float = 1.0) -> np.ndarray:
    """mu(|log|x - z|| > t) for a density bounded by C_mu, capped at 1."""
    return np.minimum(1.0, C_mu * log_distance_tail_length(z, t))


def _log2_integral(a: float) -> float:
    # integral of log(u)^2 over [0, a]
    if a <= 0:
        return 0.0
    la = math.log(a)
    return a * (la * la - 2.0 * la + 2.0)


def tail_l2_moment(z: Optional[float], level_M: float, C_mu: float = 1.0,
                   allow_boundary: bool = False) -> tuple:
    """Tail second moment of |log|x - z|| above level M.

    Returns ``(exact, printed_upper)``: the exact two-sided value
    C_mu * 2 e^-M (M^2 + 2M + 2), and the cruder 4 C_mu (M + 1) e^-M that
    follows from dropping the boundary term M^2 mu(phi > M) in the tail
    integration formula. The gap is 2 C_mu M^2 e^-M, so the exact value is larger for every M > 0.

    ``z=None`` evaluates the two-sided formula without clipping at the
    endpoints. When z sits closer than e^-M to an endpoint, raises
    :class:`BoundaryTooClose` unless ``allow_boundary``, in which case the
    clipped one-sided integral is returned.
    """
    if level_M < 0:
        raise ValueError("level_M must be nonnegative")
    r = math.exp(-level_M)
    printed = 4.0 * C_mu * (level_M + 1.0) * r
    if z is not None and (z < r or 1.0 - z < r):
        if not allow_boundary:
            raise BoundaryTooClose(f"z={z} lies within e^-M={r:.4g} of an endpoint")
        exact = C_mu * (_log2_integral(min(r, z)) + _log2_integral(min(r, 1.0 - z)))
        return exact, printed
    exact = C_mu * 2.0 * r * (level_M**2 + 2.0 * level_M + 2.0)
    return exact, printed


def tail_moment_by_quadrature(level_M: float, survival) -> float:
    """M^2 mu(phi > M) + int_M^inf 2t mu(phi > t) dt for a survival function."""
    head = level_M**2 * float(survival(level_M))
    body, _ = integrate.quad(lambda t: 2.0 * t * float(survival(t)), level_M, np.inf,
                             epsabs=1e-14, epsrel=1e-12, limit=200)
    return head + body


@dataclass(frozen=True)
class TailFit:
    C1: float
    alpha: float
    fit_range: tuple
    max_abs_log_residual: float
    C1_regression: float

    def survival(self, t):
        return self.C1 * np.exp(-self.alpha * np.asarray(t))


def fit_exponential_tail(samples, quantile_floor: float = 0.5, min_count: Optional[int] = None,
                         n_points: int = 400) -> TailFit:
    """Fit mu(phi > t) <= C1 exp(-alpha t) to the upper tail of ``samples``.

    The fit range starts at the ``quantile_floor`` sample quantile and ends
    where ``min_count`` samples remain above (default: 0.1% of the sample,
    at least 50). alpha and an initial C1 come from least squares on the log
    survival; C1 is then raised until the curve dominates the empirical
    survival over the whole range.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 1000:
        raise InsufficientTail(f"need at least 1000 samples, got {n}")
    if not 0 < quantile_floor < 1:
        raise ValueError("quantile_floor must lie in (0, 1)")
    t_min = float(np.quantile(x, quantile_floor))
    above = n - np.searchsorted(x, t_min, side="right")
    if above < MIN_TAIL_SAMPLES:
        raise InsufficientTail(f"only {above} samples above t_min={t_min:.4g}")
    if min_count is None:
        min_count = max(MIN_TAIL_SAMPLES, n // 1000)
    min_count = min(min_count, above)
    t_max = float(x[n - min_count])
    if t_max <= t_min:
        raise InsufficientTail("fit range is empty")
    grid = np.linspace(t_min, t_max, n_points)
    surv = (n - np.searchsorted(x, grid, side="right")) / n
    keep = surv > 0
    grid, surv = grid[keep], surv[keep]
    slope, intercept = np.polyfit(grid, np.log(surv), 1)
    alpha = -float(slope)
    C1_reg = float(np.exp(intercept))
    C1 = max(C1_reg, float(np.max(surv * np.exp(alpha * grid))))
    resid = np.log(surv) - (np.log(C1) - alpha * grid)
    return TailFit(C1, alpha, (t_min, t_max), float(np.max(np.abs(resid))), C1_reg)


@dataclass(frozen=True)
class TailControl:
    partial_sums: np.ndarray
    bounded_flag: bool
    sup_partial: float
    mean: float


def l2_tail_control(op: UlamOperator, tail_part, n_max: int, centered: bool = True) -> TailControl:
    """Partial sums of k^-1/2 ||Q^k tau||_2 for k = 1..m, m = 1..n_max."""
    tau = np.asarray(tail_part, dtype=float)
    if tau.shape != (op.size,):
        raise DimensionMismatch(f"vector of length {tau.size} for a {op.size}-state operator")
    m = op.mean(tau)
    if centered:
        tau = tau - m
    seq = power_sequence(op, tau, n_max)[1:]
    norms = np.sqrt(seq**2 @ op.stationary)
    partial = np.cumsum(norms / np.sqrt(np.arange(1, n_max + 1)))
    tail = partial[int(0.9 * n_max):] if n_max >= 10 else partial
    top = float(np.max(np.abs(tail)))
    bounded = top == 0.0 or (float(np.max(tail)) - float(np.min(tail))) < 0.01 * top
    return TailControl(partial, bool(bounded), float(np.max(partial)), m)


@dataclass(frozen=True)
class MartingalePath:
    increments: np.ndarray
    boundary: tuple
    reconstructed_sum: float
    direct_sum: float

    @property
    def residual(self) -> float:
        return abs(self.reconstructed_sum - self.direct_sum)


def _check_solution(op, psi):
    if psi is None or not isinstance(psi, PoissonSolution):
        raise UnsolvedPoisson("a PoissonSolution is required")
    if psi.psi.shape != (op.size,) or not np.isfinite(psi.residual):
        raise UnsolvedPoisson("Poisson solution does not match the operator")


def martingale_path(trajectory, psi: PoissonSolution, op: UlamOperator, phi) -> MartingalePath:
    """Increments X_i = psi(Z_{i+1}) - Q psi(Z_i), i = 1..n-1, for one path."""
    _check_solution(op, psi)
    cells = op.cell_of(trajectory)
    phi = np.asarray(phi, dtype=float)
    p = psi.psi
    qp = op.matrix @ p
    inc = p[cells[1:]] - qp[cells[:-1]]
    b0, b1 = float(p[cells[0]]), float(qp[cells[-1]])
    recon = math.fsum(inc) + b0 - b1
    direct = math.fsum(phi[cells])
    return MartingalePath(inc, (b0, b1), recon, direct)


def martingale_increments(paths, psi: PoissonSolution, op: UlamOperator) -> np.ndarray:
    """Increments for a stack of paths, shape (n_paths, n_steps - 1)."""
    _check_solution(op, psi)
    cells = op.cell_of(paths)
    qp = op.matrix @ psi.psi
    return psi.psi[cells[:, 1:]] - qp[cells[:, :-1]]


def martingale_property_check(op: UlamOperator, psi: PoissonSolution) -> float:
    """max_s |E[X | current state s]| computed by summing over next states."""
    _check_solution(op, psi)
    p = psi.psi
    qp = op.matrix @ p
    cond = np.array([math.fsum(op.matrix[s] * (p - qp[s])) for s in range(op.size)])
    return float(np.max(np.abs(cond)))


@dataclass(frozen=True)
class BinnedCheck:
    edges: np.ndarray
    counts: np.ndarray
    means: np.ndarray
    std_errors: np.ndarray
    z_scores: np.ndarray
    n_sigma: float

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z_scores) <= self.n_sigma))


def binned_conditional_means(states, increments, n_bins: int = 64, edges=None,
                             n_sigma: float = 3.0) -> BinnedCheck:
    """Empirical E[X | state bin] with per-bin standard errors.

    Bins default to equal-mass quantiles of ``states``; pass ``edges`` to use
    quantiles of a known stationary law instead.
    """
    s = np.asarray(states, dtype=float).ravel()
    x = np.asarray(increments, dtype=float).ravel()
    if edges is None:
        edges = np.quantile(s, np.linspace(0, 1, n_bins + 1))
    edges = np.asarray(edges, dtype=float)
    nb = edges.size - 1
    idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, nb - 1)
    counts = np.bincount(idx, minlength=nb)
    sums = np.bincount(idx, weights=x, minlength=nb)
    sq = np.bincount(idx, weights=x * x, minlength=nb)
    safe = np.maximum(counts, 1)
    means = sums / safe
    var = np.maximum(sq / safe - means**2, 0.0) * safe / np.maximum(safe - 1, 1)
    se = np.sqrt(var / safe)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, means / se, np.where(means == 0, 0.0, np.inf))
    return BinnedCheck(edges, counts, means, se, z, n_sigma)
