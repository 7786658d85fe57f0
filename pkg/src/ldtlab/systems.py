"""Markov systems, observables and trajectory simulation.

A Markov system is a state space, a transition kernel and a stationary
measure. Three kernels are supported: row-stochastic matrices on finite
spaces, piecewise-affine maps of [0, 1] (deterministic kernels x -> delta at
T(x)), and iid samplers drawing every state from a fixed density.

Chains are indexed Z_1, ..., Z_n and always start from the stationary law.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .errors import DimensionMismatch, NoConvergence, NonStochastic, SingularityHit, UnsupportedKernel

STOCHASTIC_TOL = 1e-12
STATIONARY_TOL = 1e-10
POWER_ITERATION_TOL = 1e-12
POWER_ITERATION_MAX = 10**6

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class StateSpace:
    kind: str  # "unit_interval" or "finite"
    n_states: Optional[int] = None

    def __post_init__(self):
        if self.kind == "finite":
            if self.n_states is None or self.n_states < 1:
                raise ValueError("finite state space needs n_states >= 1")
        elif self.kind != "unit_interval":
            raise ValueError(f"unknown state space kind {self.kind!r}")

    @property
    def is_finite(self) -> bool:
        return self.kind == "finite"


@dataclass(frozen=True)
class PiecewiseConstantDensity:
    """Probability density on [0, 1] that is constant between ``edges``."""

    edges: tuple
    values: tuple

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if e.ndim != 1 or e.size != v.size + 1:
            raise ValueError("density needs len(edges) == len(values) + 1")
        if e[0] != 0.0 or e[-1] != 1.0 or np.any(np.diff(e) <= 0):
            raise ValueError("density edges must increase from 0 to 1")
        if np.any(v < 0):
            raise ValueError("density values must be nonnegative")
        mass = float(np.sum(v * np.diff(e)))
        if abs(mass - 1.0) > 1e-12:
            raise ValueError(f"density integrates to {mass}, not 1")

    @classmethod
    def lebesgue(cls) -> "PiecewiseConstantDensity":
        return cls((0.0, 1.0), (1.0,))

    @property
    def sup(self) -> float:
        return float(max(self.values))

    @property
    def is_lebesgue(self) -> bool:
        return all(v == 1.0 for v in self.values)

    def cdf_knots(self) -> np.ndarray:
        e = np.asarray(self.edges)
        v = np.asarray(self.values)
        c = np.concatenate([[0.0], np.cumsum(v * np.diff(e))])
        c[-1] = 1.0
        return c

    def measure(self, a: float, b: float) -> float:
        """mu([a, b])."""
        e = np.asarray(self.edges)
        v = np.asarray(self.values)
        lo = np.clip(a, e[:-1], e[1:])
        hi = np.clip(b, e[:-1], e[1:])
        return float(np.sum(v * np.maximum(hi - lo, 0.0)))


@dataclass(frozen=True)
class PiecewiseAffineMap:
    """T(x) = slopes[i] * x + intercepts[i] on [breakpoints[i], breakpoints[i+1])."""

    breakpoints: tuple
    slopes: tuple
    intercepts: tuple

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("need at least one branch")
        if b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must increase strictly from 0 to 1")
        if len(self.slopes) != b.size - 1 or len(self.intercepts) != b.size - 1:
            raise ValueError("one slope and intercept per branch")
        for i in range(b.size - 1):
            lo = self.slopes[i] * b[i] + self.intercepts[i]
            hi = self.slopes[i] * b[i + 1] + self.intercepts[i]
            if min(lo, hi) < -1e-12 or max(lo, hi) > 1 + 1e-12:
                raise ValueError(f"branch {i} leaves [0, 1]")

    @property
    def n_branches(self) -> int:
        return len(self.slopes)

    def branch_index(self, x):
        idx = np.searchsorted(np.asarray(self.breakpoints), x, side="right") - 1
        return np.clip(idx, 0, self.n_branches - 1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        i = self.branch_index(x)
        y = np.asarray(self.slopes)[i] * x + np.asarray(self.intercepts)[i]
        y = np.clip(y, 0.0, 1.0)
        return float(y) if y.ndim == 0 else y

    def binary_orientation(self):
        """Orientation flags if this is a two-branch full map with slopes +-2.

        Such maps act on binary expansions as a shift, optionally followed
        by complementing every digit, which lets trajectories be generated
        exactly instead of by float iteration (which collapses to a fixed
        point after about 53 steps). Returns None for other maps.
        """
        if tuple(self.breakpoints) != (0.0, 0.5, 1.0):
            return None
        flags = []
        for i, (s, c) in enumerate(zip(self.slopes, self.intercepts)):
            lo = s * self.breakpoints[i] + c
            hi = s * self.breakpoints[i + 1] + c
            if s == 2.0 and lo == 0.0 and hi == 1.0:
                flags.append(False)
            elif s == -2.0 and lo == 1.0 and hi == 0.0:
                flags.append(True)
            else:
                return None
        return tuple(flags)


@dataclass(frozen=True)
class MarkovSystem:
    space: StateSpace
    kernel: str  # "stochastic_matrix", "deterministic_map" or "iid_sampler"
    matrix: Optional[np.ndarray] = None
    map: Optional[PiecewiseAffineMap] = None
    sampler: Optional[PiecewiseConstantDensity] = None
    stationary: Optional[np.ndarray] = None
    stationary_density: Optional[PiecewiseConstantDensity] = None
    name: str = ""

    @property
    def is_finite(self) -> bool:
        return self.space.is_finite

    @property
    def C_mu(self) -> float:
        if self.stationary_density is None:
            raise UnsupportedKernel("C_mu is defined for interval systems only")
        return self.stationary_density.sup

    def step(self, x):
        """Deterministic image T(x); only for map kernels."""
        if self.kernel != "deterministic_map":
            raise UnsupportedKernel("step() needs a deterministic map")
        return self.map(x)

    def check(self):
        """Assert the type invariants; returns self for chaining."""
        if self.is_finite:
            P = self.matrix
            if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1)) > STOCHASTIC_TOL:
                raise NonStochastic("matrix is not row-stochastic")
            pi = self.stationary
            if np.max(np.abs(pi @ P - pi)) > STATIONARY_TOL:
                raise ValueError("stationary vector is not invariant")
        return self


def check_stochastic(matrix) -> np.ndarray:
    P = np.array(matrix, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
        raise NonStochastic(f"expected a square matrix, got shape {P.shape}")
    if np.any(P < 0):
        raise NonStochastic("matrix has negative entries")
    dev = np.abs(P.sum(axis=1) - 1.0)
    if np.max(dev) > STOCHASTIC_TOL:
        row = int(np.argmax(dev))
        raise NonStochastic(f"row {row} sums to {P[row].sum()!r}")
    return P


def _polish(PT, pi, extra=1000):
    # keep iterating while the residual still shrinks; downstream centering
    # and Poisson solves inherit whatever error is left in pi
    res = np.max(np.abs(PT @ pi - pi))
    for _ in range(extra):
        nxt = PT @ pi
        nxt /= nxt.sum()
        r = np.max(np.abs(PT @ nxt - nxt))
        if r >= res:
            break
        pi, res = nxt, r
    return pi


def stationary_power_iteration(P, tol=POWER_ITERATION_TOL, max_iter=POWER_ITERATION_MAX):
    """Left fixed point of P by power iteration from the uniform vector."""
    n = P.shape[0]
    pi = np.full(n, 1.0 / n)
    PT = np.ascontiguousarray(P.T)
    for _ in range(max_iter):
        nxt = PT @ pi
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) <= tol and np.max(np.abs(nxt @ P - nxt)) <= tol:
            return _polish(PT, nxt)
        pi = nxt
    raise NoConvergence("power iteration did not converge; supply stationary_hint")


def build_finite_chain(matrix, stationary_hint=None, name="finite") -> MarkovSystem:
    P = check_stochastic(matrix)
    n = P.shape[0]
    if stationary_hint is not None:
        pi = np.asarray(stationary_hint, dtype=float)
        if pi.shape != (n,):
            raise DimensionMismatch("stationary_hint length does not match matrix")
        if np.any(pi < 0) or abs(pi.sum() - 1) > 1e-12:
            raise ValueError("stationary_hint is not a probability vector")
        if np.max(np.abs(pi @ P - pi)) > STATIONARY_TOL:
            raise ValueError("stationary_hint is not invariant under the matrix")
    elif n > 1 and np.count_nonzero(np.abs(np.linalg.eigvals(P) - 1.0) < 1e-9) > 1:
        # reducible: power iteration would stop at whatever invariant vector is nearest the start
        raise NoConvergence("kernel has no unique stationary law; supply stationary_hint")
    else:
        pi = stationary_power_iteration(P)
    P.setflags(write=False)
    pi = np.array(pi)
    pi.setflags(write=False)
    return MarkovSystem(StateSpace("finite", n), "stochastic_matrix", matrix=P, stationary=pi, name=name)


def build_map_system(breakpoints, slopes, intercepts, stationary_density=None, name="map") -> MarkovSystem:
    """Deterministic system for a piecewise-affine map (Lebesgue by default)."""
    T = PiecewiseAffineMap(tuple(float(b) for b in breakpoints), tuple(float(s) for s in slopes),
                           tuple(float(c) for c in intercepts))
    dens = stationary_density or PiecewiseConstantDensity.lebesgue()
    return MarkovSystem(StateSpace("unit_interval"), "deterministic_map", map=T,
                        stationary_density=dens, name=name)


def build_tent_system() -> MarkovSystem:
    return build_map_system((0.0, 0.5, 1.0), (2.0, -2.0), (0.0, 2.0), name="tent")


def build_doubling_system() -> MarkovSystem:
    return build_map_system((0.0, 0.5, 1.0), (2.0, 2.0), (0.0, -1.0), name="doubling")


def build_identity_system() -> MarkovSystem:
    return build_map_system((0.0, 1.0), (1.0,), (0.0,), name="identity")


def build_iid_system(density: Optional[PiecewiseConstantDensity] = None) -> MarkovSystem:
    dens = density or PiecewiseConstantDensity.lebesgue()
    return MarkovSystem(StateSpace("unit_interval"), "iid_sampler", sampler=dens,
                        stationary_density=dens, name="iid")


# ---------------------------------------------------------------- observables

@dataclass(frozen=True)
class Observable:
    """phi(x) = scale * base(x) + shift, optionally truncated.

    ``kind`` selects base: "tabular" (one value per finite state),
    "log_distance" (|log|x - z||), "affine" (a*x + b) or "indicator"
    (1 on [lo, hi)). ``truncation`` is ("le", M) to keep phi where phi <= M
    and zero it elsewhere, or ("gt", M) for the complement.
    """

    kind: str
    params: tuple = ()
    scale: float = 1.0
    shift: float = 0.0
    truncation: Optional[tuple] = None
    centered: bool = False

    def __post_init__(self):
        if self.kind not in ("tabular", "log_distance", "affine", "indicator"):
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if self.kind == "log_distance" and not 0.0 <= self.params[0] <= 1.0:
            raise ValueError("singularity point z must lie in [0, 1]")
        if self.truncation is not None and self.truncation[0] not in ("le", "gt"):
            raise ValueError("truncation mode must be 'le' or 'gt'")

    @property
    def z(self) -> float:
        if self.kind != "log_distance":
            raise AttributeError("only log_distance observables have a singularity")
        return self.params[0]

    @property
    def values(self) -> np.ndarray:
        """Transformed per-state values of a tabular observable."""
        if self.kind != "tabular":
            raise AttributeError("values is defined for tabular observables")
        return self._transform(np.asarray(self.params, dtype=float))

    @property
    def sup_norm(self) -> float:
        if self.kind == "tabular":
            return float(np.max(np.abs(self.values)))
        if self.kind == "log_distance" and (self.truncation is None or self.truncation[0] == "gt"):
            return math.inf if self.scale != 0 else abs(self.shift)
        return _sup_on_grid(self)

    def _transform(self, base):
        v = self.scale * base + self.shift
        if self.truncation is not None:
            mode, level = self.truncation
            keep = v <= level if mode == "le" else v > level
            v = np.where(keep, v, 0.0)
        return v

    def base(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "log_distance":
            with np.errstate(divide="ignore"):
                return -np.log(np.abs(x - self.params[0]))
        if self.kind == "affine":
            return self.params[0] * x + self.params[1]
        if self.kind == "indicator":
            return ((x >= self.params[0]) & (x < self.params[1])).astype(float)
        return np.asarray(self.params, dtype=float)[x.astype(int)]

    def __call__(self, x):
        out = self._transform(self.base(x))
        return float(out) if np.ndim(out) == 0 else out

    def with_truncation(self, mode: str, level: float) -> "Observable":
        if self.truncation is not None:
            raise ValueError("observable is already truncated")
        return replace(self, truncation=(mode, float(level)), centered=False)

    def shifted(self, delta: float, centered: bool = False) -> "Observable":
        if self.truncation is not None:
            raise ValueError("cannot shift a truncated observable in place")
        return replace(self, shift=self.shift + delta, centered=centered)

    def kernel_args(self):
        codes = {"log_distance": K.OBS_LOG_DISTANCE, "affine": K.OBS_AFFINE, "indicator": K.OBS_INDICATOR}
        p0, p1 = (tuple(self.params) + (0.0, 0.0))[:2]
        if self.truncation is None:
            tmode, tlevel = K.TRUNC_NONE, 0.0
        else:
            tmode = K.TRUNC_LE if self.truncation[0] == "le" else K.TRUNC_GT
            tlevel = float(self.truncation[1])
        return (codes[self.kind], float(p0), float(p1), float(self.scale), float(self.shift), tmode, tlevel)


def _sup_on_grid(obs):
    from .quadrature import _breakpoints

    grid = np.concatenate([np.linspace(0.0, 1.0, 200001), np.clip(_breakpoints(obs), 0.0, 1.0)])
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = obs(grid)
    vals = np.asarray(vals)[np.isfinite(vals)]
    return float(np.max(np.abs(vals))) if vals.size else 0.0


def tabular(values, centered=False) -> Observable:
    return Observable("tabular", tuple(float(v) for v in values), centered=centered)


def log_distance(z: float) -> Observable:
    return Observable("log_distance", (float(z),))


def log_x() -> Observable:
    """phi(x) = log x, i.e. minus the log-distance to 0."""
    return Observable("log_distance", (0.0,), scale=-1.0)


def affine(a: float, b: float) -> Observable:
    return Observable("affine", (float(a), float(b)))


def constant(c: float) -> Observable:
    return Observable("affine", (0.0, float(c)))


def indicator(lo: float, hi: float) -> Observable:
    return Observable("indicator", (float(lo), float(hi)))


def observable_mean(obs: Observable, system: MarkovSystem) -> float:
    """Integral of the observable against the stationary measure."""
    if system.is_finite:
        if obs.kind != "tabular":
            raise UnsupportedKernel("finite systems take tabular observables")
        return float(system.stationary @ obs.values)
    from .quadrature import interval_integral

    return interval_integral(obs, system.stationary_density, 0.0, 1.0)


def center(obs: Observable, system: MarkovSystem) -> Observable:
    """Subtract the stationary mean."""
    return obs.shifted(-observable_mean(obs, system), centered=True)


# ---------------------------------------------------------------- simulation

@dataclass
class TrajectoryBatch:
    n_steps: int
    n_trials: int
    master_seed: int
    birkhoff_sums: np.ndarray
    initial_states: np.ndarray
    final_states: np.ndarray
    redraws: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def final_and_initial_states(self):
        return np.column_stack([self.initial_states, self.final_states])


def _seed64(seed) -> np.uint64:
    return np.uint64(int(seed) & _MASK64)


def _chunks(n_trials, threads):
    threads = max(1, int(threads))
    edges = np.linspace(0, n_trials, min(threads, n_trials) + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _finite_tables(system):
    pi = np.asarray(system.stationary, dtype=float)
    init = np.cumsum(pi)
    init[-1] = 2.0
    rows = np.cumsum(system.matrix, axis=1)
    rows[:, -1] = 2.0
    return init, np.ascontiguousarray(rows)


def _interval_tables(system):
    if system.kernel == "deterministic_map":
        T = system.map
        flags = T.binary_orientation()
        if flags is not None and system.stationary_density.is_lebesgue:
            mode = K.SYMBOLIC
            neg = np.array(flags, dtype=np.bool_)
        else:
            mode = K.FLOAT_MAP
            neg = np.zeros(2, dtype=np.bool_)
        breaks = np.asarray(T.breakpoints, dtype=float)
        slopes = np.asarray(T.slopes, dtype=float)
        inter = np.asarray(T.intercepts, dtype=float)
    elif system.kernel == "iid_sampler":
        mode = K.IID
        neg = np.zeros(2, dtype=np.bool_)
        breaks = np.array([0.0, 1.0])
        slopes = np.array([1.0])
        inter = np.array([0.0])
    else:
        raise UnsupportedKernel(f"kernel {system.kernel!r} on the unit interval")
    dens = system.stationary_density
    return (mode, neg, breaks, slopes, inter, np.asarray(dens.edges, dtype=float), dens.cdf_knots())


def _run(system, observable, n_steps, n_trials, master_seed, threads, store_paths):
    if n_steps < 1 or n_trials < 1:
        raise ValueError("n_steps and n_trials must be positive")
    seed = _seed64(master_seed)
    sums = np.empty(n_trials)
    first = np.empty(n_trials)
    last = np.empty(n_trials)
    status = np.zeros(n_trials, dtype=np.int64)
    if store_paths:
        paths = np.empty((n_trials, n_steps), dtype=np.int64 if system.is_finite else float)
    else:
        paths = np.empty((0, 0), dtype=np.int64 if system.is_finite else float)

    if system.is_finite:
        if observable is None:
            values = np.zeros(system.space.n_states)
        elif observable.kind != "tabular":
            raise UnsupportedKernel("finite systems take tabular observables")
        else:
            values = observable.values
            if values.size != system.space.n_states:
                raise DimensionMismatch("observable length does not match state count")
        init, rows = _finite_tables(system)

        def work(lo, hi):
            view = paths[lo:hi] if store_paths else paths
            K.finite_batch(seed, lo, hi, init, rows, values, n_steps, sums, first, last, view)
    else:
        tables = _interval_tables(system)
        if observable is None:
            obs_args = (K.OBS_AFFINE, 0.0, 0.0, 1.0, 0.0, K.TRUNC_NONE, 0.0)
        elif observable.kind == "tabular":
            raise UnsupportedKernel("tabular observables need a finite system")
        else:
            obs_args = observable.kernel_args()

        def work(lo, hi):
            view = paths[lo:hi] if store_paths else paths
            K.interval_batch(seed, lo, hi, *tables, *obs_args, n_steps, sums, first, last, status, view)

    chunks = _chunks(n_trials, threads)
    if len(chunks) == 1:
        work(*chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            for fut in [pool.submit(work, lo, hi) for lo, hi in chunks]:
                fut.result()
    if np.any(status < 0):
        bad = int(np.flatnonzero(status < 0)[0])
        raise SingularityHit(f"trial {bad} hit the singularity on {K.MAX_ATTEMPTS} consecutive redraws")
    return sums, first, last, status, (paths if store_paths else None)


def simulate_batch(system: MarkovSystem, observable: Observable, n_steps: int, n_trials: int,
                   master_seed: int, threads: int = 1) -> TrajectoryBatch:
    """Birkhoff sums of ``n_trials`` independent stationary trajectories.

    Trial ``i`` uses its own stream derived from ``(master_seed, i)``, so the
    result is bit-identical for every ``threads`` value.
    """
    sums, first, last, status, _ = _run(system, observable, n_steps, n_trials, master_seed, threads, False)
    if system.is_finite:
        first = first.astype(np.int64)
        last = last.astype(np.int64)
    return TrajectoryBatch(n_steps, n_trials, int(master_seed), sums, first, last, status)


def simulate_paths(system: MarkovSystem, n_steps: int, n_trials: int, master_seed: int,
                   observable: Optional[Observable] = None, threads: int = 1) -> np.ndarray:
    """Full trajectories Z_1..Z_n, shape (n_trials, n_steps).

    Uses the same streams as :func:`simulate_batch`, so summing the
    observable along row ``i`` reproduces trial ``i``'s Birkhoff sum. Pass the
    observable to apply the same singularity redraws.
    """
    return _run(system, observable, n_steps, n_trials, master_seed, threads, True)[4]


def deviation_indicator(batch: TrajectoryBatch, mean: float, eps: float) -> int:
    if not eps > 0:
        raise ValueError("eps must be positive")
    avg = batch.birkhoff_sums / batch.n_steps
    return int(np.count_nonzero(np.abs(avg - mean) > eps))


def deviation_counts(batch: TrajectoryBatch, mean: float, eps_values: Sequence[float]) -> np.ndarray:
    """Hit counts for several eps on one batch."""
    return np.array([deviation_indicator(batch, mean, e) for e in eps_values], dtype=np.int64)
