"""Discretized Markov operators, the Poisson equation and mixing profiles.

For a finite chain the Markov operator is its transition matrix. For an
interval map it is approximated on a uniform partition by the Ulam matrix,
entry (i, j) = Leb(A_i & T^-1 A_j) / Leb(A_i), computed from the exact
affine preimages. The stored matrix acts on observables (Koopman side);
:meth:`UlamOperator.transfer` gives the dual with respect to the stationary
cell weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyTestSet, NoDecay, NotCentered, UnsupportedKernel
from .quadrature import cell_averages
from .systems import MarkovSystem, Observable

CENTERING_TOL = 1e-10
POISSON_MAX_ITER = 10**5
RATE_FLOOR = 1e-13


@dataclass(frozen=True)
class UlamOperator:
    matrix: np.ndarray
    stationary: np.ndarray
    partition: Optional[np.ndarray] = None  # cell edges; None for finite chains
    adjoint_flag: str = "koopman"

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def transfer(self) -> "UlamOperator":
        """Dual operator with respect to the stationary weights."""
        w = self.stationary
        safe = np.where(w > 0, w, 1.0)
        dual = (self.matrix * w[:, None]).T / safe[:, None]
        flag = "transfer" if self.adjoint_flag == "koopman" else "koopman"
        return UlamOperator(dual, w, self.partition, flag)

    def cell_of(self, x):
        """Cell index for interval points (identity for finite states)."""
        if self.partition is None:
            return np.asarray(x, dtype=np.int64)
        idx = np.searchsorted(self.partition, x, side="right") - 1
        return np.clip(idx, 0, self.size - 1)

    def mean(self, phi) -> float:
        return float(self.stationary @ phi)

    def l2_norm(self, phi) -> float:
        return float(np.sqrt(self.stationary @ (np.asarray(phi) ** 2)))

    def discretize(self, observable: Observable, system: Optional[MarkovSystem] = None) -> np.ndarray:
        """Observable as a vector on this operator's states or cells."""
        if self.partition is None:
            return observable.values
        dens = system.stationary_density if system is not None else None
        if dens is None:
            from .systems import PiecewiseConstantDensity

            dens = PiecewiseConstantDensity.lebesgue()
        return cell_averages(observable, dens, self.partition)

    def to_csv(self, path) -> None:
        write_matrix_csv(self.matrix, path)


def write_matrix_csv(matrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(matrix):
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh) if row])


def finite_operator(system: MarkovSystem) -> UlamOperator:
    if not system.is_finite:
        raise UnsupportedKernel("finite_operator needs a finite chain")
    return UlamOperator(np.asarray(system.matrix), np.asarray(system.stationary))


def markov_operator(system: MarkovSystem, n_cells: int = 256) -> UlamOperator:
    """Exact matrix for finite chains, Ulam matrix otherwise."""
    if system.is_finite:
        return finite_operator(system)
    return ulam_discretize(system, n_cells)


def ulam_discretize(system: MarkovSystem, n_cells: int) -> UlamOperator:
    if system.is_finite or system.kernel != "deterministic_map":
        raise UnsupportedKernel(f"Ulam discretization needs an interval map, got {system.kernel!r}")
    if n_cells < 2:
        raise ValueError("n_cells must be at least 2")
    T = system.map
    edges = np.linspace(0.0, 1.0, n_cells + 1)
    P = np.zeros((n_cells, n_cells))
    bps = T.breakpoints
    for i in range(n_cells):
        a, b = edges[i], edges[i + 1]
        for br in range(T.n_branches):
            lo, hi = max(a, bps[br]), min(b, bps[br + 1])
            if hi <= lo:
                continue
            s, c = T.slopes[br], T.intercepts[br]
            if s == 0.0:
                j = min(int(np.searchsorted(edges, c, side="right")) - 1, n_cells - 1)
                P[i, j] += (hi - lo) / (b - a)
                continue
            y0, y1 = sorted((s * lo + c, s * hi + c))
            j0 = max(int(np.searchsorted(edges, y0, side="right")) - 1, 0)
            j1 = min(int(np.searchsorted(edges, y1, side="left")), n_cells)
            for j in range(j0, j1):
                overlap = min(y1, edges[j + 1]) - max(y0, edges[j])
                if overlap > 0:
                    P[i, j] += overlap / abs(s) / (b - a)
    dens = system.stationary_density
    weights = np.array([dens.measure(edges[i], edges[i + 1]) for i in range(n_cells)])
    return UlamOperator(P, weights, edges, "koopman")


def apply_power(op: UlamOperator, phi, n: int) -> np.ndarray:
    """Q^n phi by repeated matrix-vector products."""
    v = np.asarray(phi, dtype=float)
    if v.shape != (op.size,):
        raise DimensionMismatch(f"vector of length {v.size} for a {op.size}-state operator")
    if n < 0:
        raise ValueError("n must be nonnegative")
    v = v.copy()
    for _ in range(n):
        v = op.matrix @ v
    return v


def power_sequence(op: UlamOperator, phi, n_max: int) -> np.ndarray:
    """Rows Q^k phi for k = 0..n_max."""
    v = np.asarray(phi, dtype=float)
    if v.shape != (op.size,):
        raise DimensionMismatch(f"vector of length {v.size} for a {op.size}-state operator")
    out = np.empty((n_max + 1, op.size))
    out[0] = v
    for k in range(1, n_max + 1):
        out[k] = op.matrix @ out[k - 1]
    return out


@dataclass(frozen=True)
class PoissonSolution:
    psi: np.ndarray
    tail_cutoff: Optional[int]  # None for a direct linear solve
    residual: float
    tol: float

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.psi)))


def _check_centered(op, phi):
    m = op.mean(phi)
    if abs(m) > CENTERING_TOL:
        raise NotCentered(f"observable has stationary mean {m!r}")


def poisson_residual(op: UlamOperator, phi, psi) -> float:
    return float(np.max(np.abs(np.asarray(phi) - (psi - op.matrix @ psi)))) if len(psi) else 0.0


def solve_poisson(op: UlamOperator, phi_centered, tol: float = 1e-12,
                  max_iter: int = POISSON_MAX_ITER) -> PoissonSolution:
    """psi = sum_i Q^i phi, cut off once the terms fall below tol * (1 - rho).

    rho is the latest observed one-step contraction of the terms. Each term
    is re-centered against the stationary weights so rounding in those
    weights cannot leave a constant that never decays.
    """
    phi = np.asarray(phi_centered, dtype=float)
    if phi.shape != (op.size,):
        raise DimensionMismatch(f"vector of length {phi.size} for a {op.size}-state operator")
    if tol <= 0:
        raise ValueError("tol must be positive")
    _check_centered(op, phi)
    psi = np.zeros_like(phi)
    term = phi.copy()
    norm = float(np.max(np.abs(term)))
    rho = 0.0
    for k in range(max_iter + 1):
        psi += term
        if norm <= tol * (1.0 - min(rho, 1.0 - 1e-3)):
            res = poisson_residual(op, phi, psi)
            if res <= tol:
                return PoissonSolution(psi, k, res, tol)
        nxt = op.matrix @ term
        nxt -= op.mean(nxt)
        nxt_norm = float(np.max(np.abs(nxt)))
        if norm > 0:
            rho = nxt_norm / norm
        term, norm = nxt, nxt_norm
    raise NoDecay(f"||Q^n phi|| still {norm:.3g} after {max_iter} iterations")


def solve_poisson_exact(op: UlamOperator, phi_centered, tol: float = 1e-9) -> PoissonSolution:
    """Direct solve of (I - Q) psi = phi on the mean-zero subspace."""
    phi = np.asarray(phi_centered, dtype=float)
    if phi.shape != (op.size,):
        raise DimensionMismatch(f"vector of length {phi.size} for a {op.size}-state operator")
    _check_centered(op, phi)
    n = op.size
    A = np.eye(n) - op.matrix + np.outer(np.ones(n), op.stationary)
    psi = np.linalg.solve(A, phi)
    return PoissonSolution(psi, None, poisson_residual(op, phi, psi), tol)


@dataclass(frozen=True)
class MixingProfile:
    rates: np.ndarray  # rates[k-1] is the estimate of r_k
    exponential_fit: Optional[tuple]  # (C_L, theta); None when fewer than two positive rates
    fit_residual: float

    @property
    def theta(self) -> float:
        return self.exponential_fit[1] if self.exponential_fit else float("inf")


def mixing_profile(op: UlamOperator, test_vectors: Sequence, n_max: int) -> MixingProfile:
    vecs = [np.asarray(v, dtype=float) for v in test_vectors]
    if not vecs:
        raise EmptyTestSet("mixing_profile needs at least one test vector")
    rates = np.zeros(n_max)
    for v in vecs:
        _check_centered(op, v)
        base = float(np.max(np.abs(v)))
        if base == 0:
            continue
        seq = power_sequence(op, v, n_max)[1:]
        rates = np.maximum(rates, np.max(np.abs(seq), axis=1) / base)
    # a rate under the floor is numerically zero: the fit sees the first one
    # at the floor (finite-time mixing, e.g. Ulam chains on dyadic grids) and
    # ignores the rest, which carry no decay information
    below = np.flatnonzero(rates <= RATE_FLOOR)
    stop = int(below[0]) + 1 if below.size else n_max
    ks = np.arange(1, stop + 1)
    fit_rates = np.maximum(rates[:stop], RATE_FLOOR)
    if ks.size < 2 or np.all(rates[:stop] <= RATE_FLOOR):
        return MixingProfile(rates, None, float("nan"))
    logs = np.log(fit_rates)
    slope, intercept = np.polyfit(ks, logs, 1)
    resid = logs - (intercept + slope * ks)
    return MixingProfile(rates, (float(np.exp(intercept)), float(-slope)), float(np.sqrt(np.mean(resid**2))))


def haar_vectors(n_cells: int, levels: Optional[int] = None) -> list:
    """Centered Haar-like step vectors on a uniform partition (Lebesgue weights)."""
    out = []
    levels = levels if levels is not None else int(np.log2(n_cells))
    for lev in range(levels):
        blocks = 2**lev
        width = n_cells // (2 * blocks)
        if width < 1:
            break
        for b in range(blocks):
            v = np.zeros(n_cells)
            start = 2 * b * width
            v[start:start + width] = 1.0
            v[start + width:start + 2 * width] = -1.0
            out.append(v)
    return out
