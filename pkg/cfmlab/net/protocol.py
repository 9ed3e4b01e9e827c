from __future__ import annotations

# On-disk formats written by cfmlab.
# All JSON documents are UTF-8, compact separators, sorted keys; floats are
# written with repr() so they read back bit-exact.
#
# Checkpoint (checkpoint.json):
# - { layer_dims: [d+1, h1, ..., d], activation: 'selu',
#     weights: [[row-major floats of layer 0], ...], biases: [[...], ...] }
# Run metadata (meta.json):
# - { format: FORMAT_VERSION, config: {...}, seed: int, checkpoint_sha1: str,
#     wall_clock_s: float, n_checks: int, steps_failed: int }
# Trajectory dump (trajectories.json):
# - { source: [[x, y], ...], target: [[x, y], ...], trajectories: [[[x, y], ...], ...] }
# Bridge summary (sb_summary.json):
# - { run_id: str, n_timepoints: int, mean_w2_sq: float }
# CSV files carry a header row; column orders are the *_COLUMNS constants.

FORMAT_VERSION = 1

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "elapsed_s")
REPORT_COLUMNS = (
    "run_id",
    "algorithm",
    "dataset",
    "sigma",
    "seed",
    "w2_sq",
    "pe",
    "npe",
    "nfe_mean",
    "integrator",
    "n_steps",
)
CURVE_COLUMNS = ("t", "w2_sq")
SWEEP_COLUMNS = (
    "param",
    "value",
    "n_ok",
    "n_failed",
    "w2_sq_mean",
    "w2_sq_std",
    "npe_mean",
    "npe_std",
    "ov_mean",
    "ov_std",
)
