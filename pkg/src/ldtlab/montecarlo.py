"""Empirical and exact deviation probabilities, and bound domination studies."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .bounds import BoundResult
from .errors import GridMismatch, LatticeOverflow, NonLattice, UnsupportedKernel
from .systems import (MarkovSystem, Observable, TrajectoryBatch, deviation_indicator, observable_mean,
                      simulate_batch)

MAX_DENOMINATOR = 10**4
MAX_TABLE_CELLS = 10**8


def clopper_pearson(hits: int, trials: int, level: float) -> tuple:
    if not 0 < level < 1:
        raise ValueError("ci level must lie in (0, 1)")
    a = 1.0 - level
    lo = 0.0 if hits == 0 else float(stats.beta.ppf(a / 2, hits, trials - hits + 1))
    hi = 1.0 if hits == trials else float(stats.beta.ppf(1 - a / 2, hits + 1, trials - hits))
    return lo, hi


@dataclass(frozen=True)
class MonteCarloEstimate:
    n: int
    eps: float
    hits: int
    trials: int
    ci_level: float
    ci: tuple
    master_seed: int

    @property
    def p_hat(self) -> float:
        return self.hits / self.trials

    @property
    def upper(self) -> float:
        return self.ci[1]


def _estimate(batch: TrajectoryBatch, mean: float, eps: float, ci_level: float) -> MonteCarloEstimate:
    hits = deviation_indicator(batch, mean, eps)
    return MonteCarloEstimate(batch.n_steps, eps, hits, batch.n_trials, ci_level,
                              clopper_pearson(hits, batch.n_trials, ci_level), batch.master_seed)


def estimate_deviation(system: MarkovSystem, observable: Observable, n: int, eps: float, trials: int,
                       master_seed: int, ci_level: float = 0.99, mean: Optional[float] = None,
                       margin: float = 0.0, threads: int = 1) -> MonteCarloEstimate:
    """Estimate P(|S_n/n - mean| > eps + margin) with a Clopper-Pearson interval.

    ``mean`` defaults to the stationary mean. The reported eps is the one
    passed in; ``margin`` shifts the event (the tent corollary monitors
    |S_n/n| > 1 + eps on the uncentered log).
    """
    if trials < 100:
        raise ValueError("estimate_deviation needs at least 100 trials")
    if mean is None:
        mean = observable_mean(observable, system)
    batch = simulate_batch(system, observable, n, trials, master_seed, threads=threads)
    est = _estimate(batch, mean, eps + margin, ci_level)
    return MonteCarloEstimate(n, eps, est.hits, trials, ci_level, est.ci, master_seed)


def estimate_grid(system: MarkovSystem, observable: Observable, ns: Sequence[int], eps_values: Sequence[float],
                  trials: int, master_seed: int, ci_level: float = 0.99, mean: Optional[float] = None,
                  margin: float = 0.0, threads: int = 1) -> dict:
    """Estimates for every (n, eps); one batch per n is shared across eps."""
    if mean is None:
        mean = observable_mean(observable, system)
    out = {}
    for n in ns:
        batch = simulate_batch(system, observable, int(n), trials, master_seed, threads=threads)
        for e in eps_values:
            est = _estimate(batch, mean, e + margin, ci_level)
            out[(int(n), float(e))] = MonteCarloEstimate(int(n), float(e), est.hits, trials, ci_level,
                                                         est.ci, master_seed)
    return out


@dataclass(frozen=True)
class ExactDeviation:
    n: int
    eps: float
    probability: float
    support_resolution: Fraction  # lattice spacing of the observable values


def lattice(values, max_den: int = MAX_DENOMINATOR) -> tuple:
    """Integers k_i and spacing h with values_i == k_i * h exactly."""
    fracs = [Fraction(v) for v in values]
    den = 1
    for f in fracs:
        g = f.limit_denominator(max_den)
        if g != f:
            raise NonLattice(f"{float(f)!r} is not a rational with denominator <= {max_den}")
        den = den * g.denominator // math.gcd(den, g.denominator)
    if den > max_den:
        raise NonLattice(f"common denominator {den} exceeds {max_den}")
    ints = [int(f * den) for f in fracs]
    return ints, Fraction(1, den)


def _dp_totals(system: MarkovSystem, ints, n_max: int):
    """Yield (n, totals) where totals[j] = P(S_n = j + n * min(ints)) on the lattice."""
    k = np.asarray(ints, dtype=np.int64)
    lo_v, hi_v = int(k.min()), int(k.max())
    n_states = k.size
    span = n_max * (hi_v - lo_v) + 1
    if n_max * n_states * span > MAX_TABLE_CELLS:
        raise LatticeOverflow(f"table of {n_max * n_states * span} cells exceeds {MAX_TABLE_CELLS}")
    P = np.asarray(system.matrix, dtype=float)
    offset = k - lo_v  # shift so every step adds a nonnegative amount
    # dist[s, j]: probability of ending in state s with shifted sum j
    dist = np.zeros((n_states, span))
    dist[np.arange(n_states), offset] = system.stationary
    yield 1, dist.sum(axis=0), lo_v
    for n in range(2, n_max + 1):
        new = np.zeros_like(dist)
        for t in range(n_states):
            mass = P[:, t] @ dist
            o = offset[t]
            new[t, o:] += mass[:span - o]
        dist = new
        yield n, dist.sum(axis=0), lo_v


def _tail_mass(totals, n, lo_v, h, mean, eps):
    # integer sums s satisfy |s h / n - mean| > eps  iff  s > upper or s < lower
    m, e = Fraction(mean), Fraction(eps)
    upper = math.floor((m + e) * n / h)
    lower = math.ceil((m - e) * n / h)
    sums = np.arange(totals.size, dtype=np.int64) + n * lo_v
    hit = (sums > upper) | (sums < lower)
    return min(1.0, max(0.0, math.fsum(totals[hit])))


def _dp_setup(system, observable, eps_values):
    if not system.is_finite or observable.kind != "tabular":
        raise UnsupportedKernel("exact DP needs a finite chain and a tabular observable")
    if any(not e > 0 for e in eps_values):
        raise ValueError("eps must be positive")
    return lattice(observable.values)


def exact_deviation_dp(system: MarkovSystem, observable: Observable, n: int, eps: float,
                       mean: Optional[float] = None) -> ExactDeviation:
    """P_mu(|S_n/n - mean| > eps) by dynamic programming over the integer sum lattice.

    Sums are tracked exactly as integers on the observable's lattice; only
    path probabilities are floating point.
    """
    ints, h = _dp_setup(system, observable, [eps])
    if mean is None:
        mean = observable_mean(observable, system)
    for m, totals, lo_v in _dp_totals(system, ints, n):
        if m == n:
            return ExactDeviation(n, eps, _tail_mass(totals, n, lo_v, h, mean, eps), h)
    raise ValueError("n must be positive")


def exact_deviation_table(system: MarkovSystem, observable: Observable, ns: Sequence[int],
                          eps_values: Sequence[float], mean: Optional[float] = None) -> dict:
    """Exact probabilities for every (n, eps) from a single DP pass."""
    ints, h = _dp_setup(system, observable, eps_values)
    if mean is None:
        mean = observable_mean(observable, system)
    wanted = {int(n) for n in ns}
    out = {}
    for n, totals, lo_v in _dp_totals(system, ints, max(wanted)):
        if n in wanted:
            for e in eps_values:
                out[(n, float(e))] = ExactDeviation(n, float(e), _tail_mass(totals, n, lo_v, h, mean, e), h)
    return out


# ---------------------------------------------------------------- domination

PASS, FAIL, VACUOUS, NOT_APPLICABLE = "PASS", "FAIL", "VACUOUS", "NOT_APPLICABLE"

REPORT_COLUMNS = ("n", "eps", "p_hat", "ci_low", "ci_high", "exact", "bound_raw", "bound", "verdict")


@dataclass(frozen=True)
class StudyRow:
    n: int
    eps: float
    p_hat: Optional[float]
    ci_low: Optional[float]
    ci_high: Optional[float]
    exact: Optional[float]
    bound_raw: float
    bound: float
    verdict: str

    def as_record(self) -> list:
        return [self.n, self.eps, self.p_hat, self.ci_low, self.ci_high, self.exact,
                self.bound_raw, self.bound, self.verdict]


@dataclass(frozen=True)
class DominationReport:
    rows: list

    def count(self, verdict: str, eps: Optional[float] = None) -> int:
        return sum(1 for r in self.rows if r.verdict == verdict and (eps is None or r.eps == eps))

    @property
    def counts(self) -> dict:
        return {v: self.count(v) for v in (PASS, FAIL, VACUOUS, NOT_APPLICABLE)}

    @property
    def ok(self) -> bool:
        return self.count(FAIL) == 0

    def to_csv(self, path) -> None:
        write_report_csv(self.rows, path)


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_report_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([format_cell(v) for v in r.as_record()])


def verdict(bound: BoundResult, target: float) -> str:
    if not bound.valid:
        return NOT_APPLICABLE
    if bound.vacuous:
        return VACUOUS
    return PASS if bound.value >= target else FAIL


def domination_study(bound_family: Callable[[int, float], BoundResult], estimates, grid) -> DominationReport:
    """Compare a bound against exact or estimated probabilities on a grid.

    ``estimates`` is a mapping keyed by (n, eps) or a sequence aligned with
    ``grid``; entries are MonteCarloEstimate (judged by the CI upper end) or
    ExactDeviation (judged by the exact value).
    """
    grid = [(int(n), float(e)) for n, e in grid]
    if isinstance(estimates, dict):
        missing = [g for g in grid if g not in estimates]
        if missing:
            raise GridMismatch(f"no estimate for grid point(s) {missing[:3]}")
        items = [estimates[g] for g in grid]
    else:
        items = list(estimates)
        if len(items) != len(grid):
            raise GridMismatch(f"{len(items)} estimates for {len(grid)} grid points")
    rows = []
    for (n, e), est in zip(grid, items):
        if (est.n, float(est.eps)) != (n, e):
            raise GridMismatch(f"estimate for {(est.n, est.eps)} placed at grid point {(n, e)}")
        b = bound_family(n, e)
        if isinstance(est, ExactDeviation):
            rows.append(StudyRow(n, e, None, None, None, est.probability, b.raw_value, b.value,
                                 verdict(b, est.probability)))
        else:
            rows.append(StudyRow(n, e, est.p_hat, est.ci[0], est.ci[1], None, b.raw_value, b.value,
                                 verdict(b, est.ci[1])))
    return DominationReport(rows)
