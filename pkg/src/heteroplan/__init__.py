"""Planner and schedule simulator for pipeline training on mixed-chip clusters."""
from .cluster import (
    ChipTypeSpec,
    ClusterSpec,
    ProfileTable,
    WorkloadSpec,
    synthesize_profile,
)
from .cost_model import (
    CostBreakdown,
    ParallelPlan,
    PlanSegment,
    check_plan_feasibility,
    estimate_iteration_time,
)
from .errors import InfeasibleError, ProfileLookupError, ValidationError
from .search import SearchResult, brute_force_oracle, search_plan, two_stage_search

__version__ = "0.1.0"

__all__ = [
    "ChipTypeSpec",
    "ClusterSpec",
    "ProfileTable",
    "WorkloadSpec",
    "synthesize_profile",
    "CostBreakdown",
    "ParallelPlan",
    "PlanSegment",
    "check_plan_feasibility",
    "estimate_iteration_time",
    "InfeasibleError",
    "ProfileLookupError",
    "ValidationError",
    "SearchResult",
    "brute_force_oracle",
    "search_plan",
    "two_stage_search",
    "__version__",
]
