from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldtlab import bounds as B
from ldtlab import montecarlo as MC
from ldtlab import systems as S
from ldtlab.errors import GridMismatch, LatticeOverflow, NonLattice, UnsupportedKernel

from oracles import enumerate_deviation, random_chain

TWO = [[0.7, 0.3], [0.1, 0.9]]


def test_clopper_pearson_edges():
    lo, hi = MC.clopper_pearson(0, 100, 0.95)
    assert lo == 0.0 and hi == pytest.approx(1 - 0.025 ** (1 / 100), rel=1e-10)
    lo, hi = MC.clopper_pearson(100, 100, 0.95)
    assert hi == 1.0 and lo == pytest.approx(0.025 ** (1 / 100), rel=1e-10)
    lo, hi = MC.clopper_pearson(50, 100, 0.99)
    assert lo < 0.5 < hi
    with pytest.raises(ValueError):
        MC.clopper_pearson(1, 10, 1.0)


def test_lattice():
    ints, h = MC.lattice([0.25, -0.5, 1.0])
    assert ints == [1, -2, 4] and h == Fraction(1, 4)
    with pytest.raises(NonLattice):
        MC.lattice([1 / 3])
    with pytest.raises(NonLattice):
        MC.lattice([1 / 9973, 1 / 9967])


def test_exact_dp_hand_example():
    ch = S.build_finite_chain(TWO)
    r = MC.exact_deviation_dp(ch, S.tabular([1.0, -1.0]), 3, 0.9)
    # only the path 0,0,0 gives S_3 / 3 = 1, which is 1.5 above the mean -0.5
    assert r.probability == pytest.approx(0.25 * 0.7 * 0.7, abs=1e-15)


def test_exact_dp_iid_two_point():
    ch = S.build_finite_chain([[0.5, 0.5], [0.5, 0.5]])
    obs = S.tabular([-0.5, 0.5])
    assert MC.exact_deviation_dp(ch, obs, 2, 0.4).probability == 0.5
    assert MC.exact_deviation_dp(ch, obs, 2, 0.5).probability == 0.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 3), n=st.integers(1, 8),
       eps=st.sampled_from([0.05, 0.2, 0.25, 0.5, 1.0]))
def test_exact_dp_matches_enumeration(seed, k, n, eps):
    rng = np.random.default_rng(seed)
    P = random_chain(rng, k)
    ch = S.build_finite_chain(P)
    vals = [Fraction(int(v), 4) for v in rng.integers(-4, 5, size=k)]
    obs = S.tabular([float(v) for v in vals])
    mean = S.observable_mean(obs, ch)
    ref = enumerate_deviation(P, ch.stationary, vals, n, eps, mean)
    got = MC.exact_deviation_dp(ch, obs, n, eps).probability
    assert got == pytest.approx(ref, abs=1e-12)


def test_exact_table_matches_single_calls():
    ch = S.build_finite_chain([[0.2, 0.8, 0.0], [0.3, 0.3, 0.4], [0.5, 0.0, 0.5]])
    obs = S.tabular([0.5, -1.0, 0.25])
    table = MC.exact_deviation_table(ch, obs, [1, 5, 17], [0.1, 0.5])
    for (n, e), r in table.items():
        assert r.probability == MC.exact_deviation_dp(ch, obs, n, e).probability
    assert set(table) == {(n, e) for n in (1, 5, 17) for e in (0.1, 0.5)}


def test_exact_dp_errors():
    ch = S.build_finite_chain([[0.2, 0.8, 0.0], [0.3, 0.3, 0.4], [0.5, 0.0, 0.5]])
    with pytest.raises(LatticeOverflow):
        MC.exact_deviation_dp(ch, S.tabular([0.0, 1.0, 1 / 8192]), 2000, 0.1)
    with pytest.raises(UnsupportedKernel):
        MC.exact_deviation_dp(S.build_tent_system(), S.log_x(), 2, 0.1)
    with pytest.raises(ValueError):
        MC.exact_deviation_dp(ch, S.tabular([0.0, 1.0, 0.5]), 2, 0.0)


def test_estimate_covers_exact():
    ch = S.build_finite_chain(TWO)
    obs = S.tabular([1.0, -1.0])
    exact = MC.exact_deviation_dp(ch, obs, 10, 0.3).probability
    est = MC.estimate_deviation(ch, obs, 10, 0.3, 20000, 5, ci_level=0.999)
    assert est.ci[0] <= exact <= est.ci[1]
    assert est.upper == est.ci[1] and est.p_hat == est.hits / 20000
    with pytest.raises(ValueError):
        MC.estimate_deviation(ch, obs, 10, 0.3, 50, 5)


def test_estimate_grid_matches_single():
    ch = S.build_finite_chain(TWO)
    obs = S.tabular([1.0, -1.0])
    grid = MC.estimate_grid(ch, obs, [5, 20], [0.2, 0.6], 1000, 9)
    single = MC.estimate_deviation(ch, obs, 20, 0.6, 1000, 9)
    assert grid[(20, 0.6)] == single


def test_margin_shifts_event():
    tent = S.build_tent_system()
    a = MC.estimate_deviation(tent, S.log_x(), 64, 0.25, 2000, 3, mean=0.0, margin=1.0)
    b = MC.estimate_deviation(tent, S.log_x(), 64, 1.25, 2000, 3, mean=0.0)
    assert a.hits == b.hits and a.eps == 0.25


def _est(n, e, upper):
    return MC.MonteCarloEstimate(n, e, 0, 1000, 0.99, (0.0, upper), 0)


def test_domination_verdicts():
    fam = lambda n, e: B.bounded_ldt(n, e, 1.0, 1.0)  # threshold ceil(4/e)
    grid = [(2, 1.0), (10, 1.0), (720, 1.0), (7200, 1.0)]
    est = {(2, 1.0): _est(2, 1.0, 0.5), (10, 1.0): _est(10, 1.0, 0.1),
           (720, 1.0): _est(720, 1.0, 0.01), (7200, 1.0): _est(7200, 1.0, 0.0)}
    rep = MC.domination_study(fam, est, grid)
    assert [r.verdict for r in rep.rows] == [MC.NOT_APPLICABLE, MC.VACUOUS, MC.FAIL, MC.PASS]
    assert not rep.ok and rep.counts[MC.FAIL] == 1
    exact = [MC.ExactDeviation(720, 1.0, 0.0, Fraction(1)), ]
    assert MC.domination_study(fam, exact, [(720, 1.0)]).rows[0].verdict == MC.PASS


def test_domination_grid_mismatch():
    fam = lambda n, e: B.tent_corollary_bound(n, e)
    with pytest.raises(GridMismatch):
        MC.domination_study(fam, {}, [(10, 1.0)])
    with pytest.raises(GridMismatch):
        MC.domination_study(fam, [_est(10, 1.0, 0.1)], [(10, 1.0), (20, 1.0)])
    with pytest.raises(GridMismatch):
        MC.domination_study(fam, [_est(11, 1.0, 0.1)], [(10, 1.0)])


def test_report_csv(tmp_path):
    fam = lambda n, e: B.tent_corollary_bound(n, e)
    rep = MC.domination_study(fam, [_est(600, 1.0, 0.25)], [(600, 1.0)])
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(MC.REPORT_COLUMNS)
    cells = lines[1].split(",")
    assert cells[0] == "600" and cells[5] == "" and cells[-1] == MC.VACUOUS
    assert float(cells[6]) == B.tent_corollary_bound(600, 1.0).raw_value


def test_constant_observable_never_deviates():
    est = MC.estimate_deviation(S.build_tent_system(), S.constant(2.5), 50, 1e-6, 1000, 1)
    assert est.hits == 0 and est.p_hat == 0.0


def test_tent_estimate_below_corollary_bound():
    # log x - (-1) is centered; the corollary bound is capped at this n
    est = MC.estimate_deviation(S.build_tent_system(), S.log_x(), 10**4, 0.5, 10**5, 44, mean=-1.0)
    b = B.tent_corollary_bound(10**4, 0.5)
    assert b.valid and est.ci[1] <= b.value


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 4), n=st.integers(1, 12),
       eps=st.sampled_from([0.05, 0.1, 0.25, 0.5, 0.75]))
def test_exact_dp_matches_enumeration_up_to_4_states(seed, k, n, eps):
    rng = np.random.default_rng(seed)
    P = random_chain(rng, k)
    ch = S.build_finite_chain(P)
    vals = [Fraction(int(v), 8) for v in rng.integers(-8, 9, size=k)]
    obs = S.tabular([float(v) for v in vals])
    ref = enumerate_deviation(P, ch.stationary, vals, n, eps)
    assert MC.exact_deviation_dp(ch, obs, n, eps).probability == pytest.approx(ref, abs=1e-12)


def test_estimate_converges_to_exact():
    ch = S.build_finite_chain(TWO)
    obs = S.tabular([1.0, -1.0])
    exact = MC.exact_deviation_dp(ch, obs, 20, 0.3).probability
    trials = 2000
    tol = 4 * np.sqrt(exact * (1 - exact) / trials) + 1e-6
    good = sum(abs(MC.estimate_deviation(ch, obs, 20, 0.3, trials, seed).p_hat - exact) <= tol
               for seed in range(100))
    assert good >= 99
