from .csvio import PointCloudSeries, Whitening, load_csv
from .synthetic import (
    DatasetSpec,
    funnel_grad_log_density,
    funnel_log_density,
    sample_dataset,
)

__all__ = [
    "DatasetSpec",
    "PointCloudSeries",
    "Whitening",
    "funnel_grad_log_density",
    "funnel_log_density",
    "load_csv",
    "sample_dataset",
]
