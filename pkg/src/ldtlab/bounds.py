"""Closed-form deviation bounds with explicit constants.

Each evaluator returns a :class:`BoundResult` carrying the uncapped formula
value, the value capped at 1, and the sample size from which the bound is
claimed. ``c_scale`` multiplies the exponent constant; it exists only so
verification runs can deliberately break a bound (falsification controls).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import EpsOutOfRange, InvalidExponent, NonPositiveParameter

CBRT4 = 4.0 ** (1.0 / 3.0)


@dataclass(frozen=True)
class BoundResult:
    family: str
    n: int
    eps: float
    raw_value: float
    threshold: int
    metadata: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return min(1.0, self.raw_value)

    @property
    def valid(self) -> bool:
        return self.n >= self.threshold

    @property
    def vacuous(self) -> bool:
        return self.value >= 1.0

    def two_sided(self) -> "BoundResult":
        """Union bound over both tails of a one-sided result."""
        meta = dict(self.metadata, sides=2)
        return BoundResult(self.family + "_two_sided", self.n, self.eps, 2.0 * self.raw_value, self.threshold, meta)


def _positive(**kw):
    for name, v in kw.items():
        if not (v > 0):
            raise NonPositiveParameter(f"{name} must be positive, got {v!r}")


def azuma_hoeffding(n: int, eps: float, C: float, c_scale: float = 1.0) -> BoundResult:
    _positive(n=n, eps=eps, C=C)
    raw = math.exp(-c_scale * n * eps**2 / (2.0 * C**2))
    return BoundResult("azuma_hoeffding", n, eps, raw, 1, {"C": C})


def bounded_ldt(n: int, eps: float, sup_phi: float, sup_psi: float, c_scale: float = 1.0) -> BoundResult:
    """2 exp(-eps^2 n / (8 (|phi| + 2 |psi|)^2)) for n >= ceil(4 |psi| / eps)."""
    _positive(n=n, eps=eps, sup_psi=sup_psi)
    if sup_phi < 0:
        raise NonPositiveParameter("sup_phi must be nonnegative")
    c = eps**2 / (8.0 * (sup_phi + 2.0 * sup_psi) ** 2)
    raw = 2.0 * math.exp(-c_scale * c * n)
    meta = {
        "c_eps": c,
        "sup_phi": sup_phi,
        "sup_psi": sup_psi,
        # the 4/(eps |psi|) form of the threshold, kept for comparison
        "printed_threshold": 4.0 / (eps * sup_psi),
    }
    return BoundResult("bounded_ldt", n, eps, raw, math.ceil(4.0 * sup_psi / eps), meta)


def burkholder_rhs(p: float, n: int, norm_X1_p: float, cond_norms: Sequence[float],
                   C_p: Optional[float] = None) -> float:
    """C_p sqrt(n) (|X_1|_p + 240 sum_k k^-1/2 |E[X_k | F_0]|_p)."""
    if not p >= 2:
        raise InvalidExponent(f"p must be at least 2, got {p!r}")
    if len(cond_norms) != n:
        raise ValueError(f"need {n} conditional norms, got {len(cond_norms)}")
    if C_p is None:
        C_p = p**p
    tail = math.fsum(c / math.sqrt(k) for k, c in enumerate(cond_norms, start=1))
    return C_p * math.sqrt(n) * (norm_X1_p + 240.0 * tail)


def truncation_level(eps: float, n: int) -> float:
    """M = eps^(2/3) n^(1/3) / 4^(1/3), balancing the two error terms."""
    return eps ** (2.0 / 3.0) * n ** (1.0 / 3.0) / CBRT4


def balancing_constant(alpha: float) -> float:
    """c(alpha) = min(4^(2/3) / 8, alpha / (2 * 4^(1/3))) = 2^(-5/3) min(1, alpha).

    With M = truncation_level(eps, n) the bounded-part exponent is
    n eps^2 / (8 M^2) = 4^(2/3)/8 * eps^(2/3) n^(1/3) and the tail exponent
    alpha M / 2 = alpha / (2 * 4^(1/3)) * eps^(2/3) n^(1/3); c is the smaller
    coefficient.
    """
    _positive(alpha=alpha)
    return min(CBRT4**2 / 8.0, alpha / (2.0 * CBRT4))


def unbounded_ldt(n: int, eps: float, alpha: float, C_burk: float, norm_phi2_L2: float,
                  c_scale: float = 1.0) -> BoundResult:
    """One-sided 2 exp(-c(alpha) eps^(2/3) n^(1/3)) for n >= ceil(16 C |phi^2|_2 / eps)."""
    _positive(n=n, eps=eps, alpha=alpha, C_burk=C_burk, norm_phi2_L2=norm_phi2_L2)
    c = balancing_constant(alpha) * c_scale
    M = truncation_level(eps, n)
    addend1 = math.exp(-n * eps**2 / (8.0 * M**2))
    addend2 = 16.0 * C_burk * norm_phi2_L2 / (n * eps**2) * math.exp(-alpha * M / 2.0)
    raw = 2.0 * math.exp(-c * eps ** (2.0 / 3.0) * n ** (1.0 / 3.0))
    meta = {"c_alpha": c, "alpha": alpha, "C_burk": C_burk, "norm_phi2_L2": norm_phi2_L2,
            "M": M, "addend1": addend1, "addend2": addend2}
    return BoundResult("unbounded_ldt", n, eps, raw, math.ceil(16.0 * C_burk * norm_phi2_L2 / eps), meta)


def tent_corollary_bound(n: int, eps: float, c_scale: float = 1.0) -> BoundResult:
    """4 exp(-eps^(4/3) n^(1/3) / 24) for n >= ceil(512 / eps^3).

    The event it controls is |(1/n) sum log T^k x| > 1 + eps.
    """
    _positive(n=n, eps=eps)
    raw = 4.0 * math.exp(-c_scale * eps ** (4.0 / 3.0) * n ** (1.0 / 3.0) / 24.0)
    return BoundResult("tent_corollary", n, eps, raw, math.ceil(512.0 / eps**3),
                       {"alpha": 1.0, "C1": 1.0, "C2": 4.0, "event_margin": 1.0})


def expanding_ldt_bound(n: int, eps: float, c_eps: float, c_scale: float = 1.0) -> BoundResult:
    """exp(-c eps n^(1/3)); only for eps in (0, 1]."""
    _positive(n=n, eps=eps, c_eps=c_eps)
    if eps > 1:
        raise EpsOutOfRange("expanding_ldt_bound needs eps <= 1 (uses eps^(2/3) >= eps)")
    raw = math.exp(-c_scale * c_eps * eps * n ** (1.0 / 3.0))
    return BoundResult("expanding_ldt", n, eps, raw, 1, {"c_eps": c_eps})


FAMILIES = {
    "azuma_hoeffding": (azuma_hoeffding, ("C",)),
    "bounded_ldt": (bounded_ldt, ("sup_phi", "sup_psi")),
    "unbounded_ldt": (unbounded_ldt, ("alpha", "C_burk", "norm_phi2_L2")),
    "tent_corollary": (tent_corollary_bound, ()),
    "expanding_ldt": (expanding_ldt_bound, ("c_eps",)),
}


def evaluate(family: str, n: int, eps: float, constants: dict, c_scale: float = 1.0,
             two_sided: bool = False) -> BoundResult:
    """Dispatch by family name; ``constants`` must hold the family's parameters."""
    fn, names = FAMILIES[family]
    missing = [k for k in names if k not in constants]
    if missing:
        raise KeyError(f"{family} needs constant(s): {', '.join(missing)}")
    res = fn(n, eps, *[constants[k] for k in names], c_scale=c_scale)
    return res.two_sided() if two_sided else res
