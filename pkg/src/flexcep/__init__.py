"""Nodal capacity expansion planning with flexible large-load siting.

Solve planning instances either as one extensive-form MILP or via an
augmented progressive hedging decomposition with dualized cross-scenario
expectation constraints and lower/upper bound tracking.
"""

from .core import (
    Branch,
    Bus,
    ExpectationConstraintSpec,
    FULL_FLEX,
    GenTech,
    INFLEXIBLE,
    LargeLoadTech,
    Mandate,
    PlanningInstance,
    Scenario,
    StorageTech,
    TierSpec,
    Violation,
    compare_tiers,
    enumerate_expectation_constraints,
    validate_instance,
)
from .canonical import (
    CanonicalModel,
    SolveResult,
    VariableIndex,
    fix_variables,
    objective_value,
    relax_integrality,
)
from .build import (
    SubproblemSpec,
    build_extensive_form,
    build_scenario_subproblem,
    first_stage_info,
)
from .solvers import SolverConfig, solve, solve_lp_with_duals
from .pha import (
    BoundsRecord,
    PHAConfig,
    PHAState,
    consensus_metric,
    fix_and_iterate_upper_bound,
    lagrangian_lower_bound,
    run_pha,
)
from .oracle import OracleInstanceSpec, brute_force_optimum, generate
from .report import SolveReport
from .storage import load_instance, save_instance, save_report

__version__ = "0.1.0"
