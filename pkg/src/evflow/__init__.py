"""Urban EV charging demand assignment and station placement.

The toolkit models daily charging demand between origin-destination pairs,
assigns it to stations through per-period maximum flows, and searches for
the best budget-constrained expansion plan with an exact branch-and-bound
over an LP relaxation solved by a built-in bounded-variable simplex.
"""

from .model import (
    AssignmentResult,
    CandidateLocation,
    CostSchedule,
    EMPTY_PLAN,
    GeoPoint,
    Instance,
    InvalidInstanceError,
    InvalidPlanError,
    ODPair,
    Period,
    PlacedPoint,
    PlacementPlan,
    Station,
    load_instance,
    make_plan,
    save_instance,
    uniform_periods,
    validate_instance,
    validate_plan,
    with_budget,
)
from .geo import build_flow_network, haversine_m, impossible_demand_kw, impossible_ods
from .maxflow import CertificateError, evaluate, max_flow
from .placement import SearchParams, SolveReport, optimize, sweep
from .instgen import build_instance, example_instance, toy_city

__version__ = "0.1.0"

__all__ = [
    "AssignmentResult",
    "CandidateLocation",
    "CertificateError",
    "CostSchedule",
    "EMPTY_PLAN",
    "GeoPoint",
    "Instance",
    "InvalidInstanceError",
    "InvalidPlanError",
    "ODPair",
    "Period",
    "PlacedPoint",
    "PlacementPlan",
    "SearchParams",
    "SolveReport",
    "Station",
    "build_flow_network",
    "build_instance",
    "evaluate",
    "example_instance",
    "haversine_m",
    "impossible_demand_kw",
    "impossible_ods",
    "load_instance",
    "make_plan",
    "max_flow",
    "optimize",
    "save_instance",
    "sweep",
    "toy_city",
    "uniform_periods",
    "validate_instance",
    "validate_plan",
    "with_budget",
    "__version__",
]
