from .energy import EbmConfig, MalaResult, linear_schedule, mala_run, mala_sample, rwis_batch, train_energy
from .loop import (
    History,
    HistoryRow,
    Leg,
    RegressionBatch,
    TrainConfig,
    TrainState,
    energy_pair_weights,
    new_state,
    regression_batch,
    resampler,
    train,
    train_legs,
    train_step,
)
from .timeseries import LeaveOneOutPlan, leave_one_out_plan, train_interpolation

__all__ = [
    "EbmConfig",
    "History",
    "HistoryRow",
    "LeaveOneOutPlan",
    "Leg",
    "MalaResult",
    "RegressionBatch",
    "TrainConfig",
    "TrainState",
    "energy_pair_weights",
    "leave_one_out_plan",
    "linear_schedule",
    "mala_run",
    "mala_sample",
    "new_state",
    "regression_batch",
    "resampler",
    "rwis_batch",
    "train",
    "train_energy",
    "train_interpolation",
    "train_legs",
    "train_step",
]
