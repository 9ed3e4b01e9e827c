from .ode import (
    IntegratorSettings,
    Record,
    Trajectory,
    as_field,
    divergence,
    integrate,
    integrate_dopri5,
    integrate_fixed,
    integrate_with_logdet,
    model_field,
    sample_grid,
)

__all__ = [
    "IntegratorSettings",
    "Record",
    "Trajectory",
    "as_field",
    "divergence",
    "integrate",
    "integrate_dopri5",
    "integrate_fixed",
    "integrate_with_logdet",
    "model_field",
    "sample_grid",
]
