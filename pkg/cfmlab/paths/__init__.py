from .gaussian import (
    VARIANTS,
    PathSpec,
    aggregated_target,
    cond_field,
    marginal_field_oracle,
    mean_std,
    sample_xt,
)

__all__ = [
    "VARIANTS",
    "PathSpec",
    "aggregated_target",
    "cond_field",
    "marginal_field_oracle",
    "mean_std",
    "sample_xt",
]
