from .bridge import BridgeCurve, sb_error_curve, sb_ground_truth_sample
from .metrics import (
    MetricReport,
    evaluate_model,
    leave_one_out_eval,
    mmd,
    model_reference,
    objective_variance,
    objective_variance_terms,
    oracle_reference,
    path_energy_and_npe,
    w2_squared,
)
from .partition import PartitionEstimate, log_partition_details, log_partition_estimate

__all__ = [
    "BridgeCurve",
    "MetricReport",
    "PartitionEstimate",
    "evaluate_model",
    "leave_one_out_eval",
    "log_partition_details",
    "log_partition_estimate",
    "mmd",
    "model_reference",
    "objective_variance",
    "objective_variance_terms",
    "oracle_reference",
    "path_energy_and_npe",
    "sb_error_curve",
    "sb_ground_truth_sample",
    "w2_squared",
]
