from .plans import (
    CouplingPlan,
    PairSample,
    exact_ot_plan,
    independent_plan,
    sample_pairs,
    sinkhorn_plan,
    squared_cost,
)

__all__ = [
    "CouplingPlan",
    "PairSample",
    "exact_ot_plan",
    "independent_plan",
    "sample_pairs",
    "sinkhorn_plan",
    "squared_cost",
]
