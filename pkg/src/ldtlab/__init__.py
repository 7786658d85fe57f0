"""Large-deviation laboratory for mixing Markov systems and expanding interval maps."""

from .bounds import (BoundResult, azuma_hoeffding, balancing_constant, bounded_ldt, burkholder_rhs,
                     expanding_ldt_bound, tent_corollary_bound, truncation_level, unbounded_ldt)
from .montecarlo import (DominationReport, ExactDeviation, MonteCarloEstimate, clopper_pearson, domination_study,
                         estimate_deviation, estimate_grid, exact_deviation_dp, exact_deviation_table)
from .operator import (MixingProfile, PoissonSolution, UlamOperator, apply_power, finite_operator, mixing_profile,
                       solve_poisson, solve_poisson_exact, ulam_discretize)
from .systems import (MarkovSystem, Observable, StateSpace, TrajectoryBatch, build_doubling_system,
                      build_finite_chain, build_identity_system, build_iid_system, build_map_system,
                      build_tent_system, deviation_indicator, simulate_batch, simulate_paths)
from .truncation import (MartingalePath, TailFit, TruncationPair, decompose, fit_exponential_tail, l2_tail_control,
                         martingale_path, martingale_property_check, tail_l2_moment)

__version__ = "0.1.0"
