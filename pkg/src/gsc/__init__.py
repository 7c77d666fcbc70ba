"""Lower and upper bounds for supply-chain design MILPs by edge sampling and graph coarsening."""

__version__ = "0.1.0"

from .coarsening import (  # noqa: E402
    AggEdge,
    CoarsePlan,
    UpperBoundStats,
    assign_partitions,
    build_plan,
    classify_and_aggregate,
    formulate_coarse,
    lift_check,
    select_pivots,
    upper_bound_run,
)
from .driver import BoundReport, LevelSpec, format_gap, gap, parse_levels, run_gsc  # noqa: E402
from .generate import GenConfig, generate  # noqa: E402
from .milp import (  # noqa: E402
    MilpProblem,
    SolveResult,
    SolverParams,
    Status,
    extract_allocation,
    formulate_full,
    solve,
)
from .model import (  # noqa: E402
    Allocation,
    Consumer,
    NodeSite,
    Product,
    Supplier,
    SupplyChainInstance,
    Technology,
    TransportEdge,
    check_feasibility,
    evaluate_welfare,
    validate_instance,
)
from .sampling import EdgeSample, LowerBoundStats, formulate_sampled, lower_bound_run, sample_edges  # noqa: E402
