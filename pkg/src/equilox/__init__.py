"""Two-stage stochastic prepositioning models with equity-aware objectives.

The library builds four deterministic-equivalent MILPs over a shared
first stage (where to open response facilities, what to stock): plain
expected coverage, a pairwise mean-difference proxy, an exact ranked
Lorenz objective, and a clustered variant of the latter. A simulation
harness grades the resulting plans on fresh demand realizations.
"""

from .cluster import (
    Clustering,
    cluster_scenarios,
    elbow_select_k,
    kmeans,
    singleton_clustering,
    wss_curve,
)
from .instance import (
    Area,
    DemandTable,
    FacilityOption,
    Instance,
    InstanceError,
    InstanceParseError,
    InstanceValidationError,
    ReliefItem,
    Scenario,
    Vehicle,
    bundled_instance_path,
    demand_table_from_quantities,
    derive_demands,
    derive_shipping_costs,
    instance_from_dict,
    load_instance,
    validate_instance,
)
from .lorenz import (
    CoverageVector,
    DegenerateInputError,
    GiniResult,
    LorenzCurve,
    compute_gini,
    curve_breakpoints_csv,
    mean_difference_gini,
    objective_closed_form,
    rank_coverages,
)
from .models import (
    Constraint,
    FirstStage,
    ModelIR,
    ScenarioMetrics,
    SecondStage,
    Variable,
    add_valid_inequality,
    build_formulation,
    build_gini,
    build_ginic,
    build_gmd,
    build_sp,
    extract_metrics,
    fix_first_stage,
    second_stage_from_solution,
)
from .modelio import mps_name_map, parse_mps, write_lp, write_mps
from .sim import (
    BenefitMatrix,
    EvalRecord,
    PlanSolveError,
    Realization,
    SimulationResult,
    benefit_matrix,
    evaluate,
    posthoc_gini,
    run_simulation,
    sample_realizations,
    summarize,
    summary_stats,
)
from .solver import (
    Solution,
    SolveParams,
    recompute_objective,
    solve,
    verify_feasibility,
)

__version__ = "0.1.0"

__all__ = [
    "Area",
    "BenefitMatrix",
    "Clustering",
    "Constraint",
    "CoverageVector",
    "DegenerateInputError",
    "DemandTable",
    "EvalRecord",
    "FacilityOption",
    "FirstStage",
    "GiniResult",
    "Instance",
    "InstanceError",
    "InstanceParseError",
    "InstanceValidationError",
    "LorenzCurve",
    "ModelIR",
    "PlanSolveError",
    "Realization",
    "ReliefItem",
    "ScenarioMetrics",
    "Scenario",
    "SecondStage",
    "SimulationResult",
    "Solution",
    "SolveParams",
    "Variable",
    "Vehicle",
    "add_valid_inequality",
    "benefit_matrix",
    "build_formulation",
    "build_gini",
    "build_ginic",
    "build_gmd",
    "build_sp",
    "bundled_instance_path",
    "cluster_scenarios",
    "compute_gini",
    "curve_breakpoints_csv",
    "demand_table_from_quantities",
    "derive_demands",
    "derive_shipping_costs",
    "elbow_select_k",
    "evaluate",
    "extract_metrics",
    "fix_first_stage",
    "instance_from_dict",
    "kmeans",
    "load_instance",
    "mean_difference_gini",
    "mps_name_map",
    "objective_closed_form",
    "parse_mps",
    "posthoc_gini",
    "rank_coverages",
    "recompute_objective",
    "run_simulation",
    "sample_realizations",
    "second_stage_from_solution",
    "singleton_clustering",
    "solve",
    "summarize",
    "summary_stats",
    "validate_instance",
    "verify_feasibility",
    "write_lp",
    "write_mps",
    "wss_curve",
]
