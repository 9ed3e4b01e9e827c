from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import DatasetSpec, funnel_grad_log_density, funnel_log_density, load_csv, sample_dataset
from .eval import (
    BridgeCurve,
    evaluate_model,
    leave_one_out_eval,
    log_partition_details,
    model_reference,
    objective_variance,
    sb_error_curve,
    w2_squared,
)
from .experiment import SWEEP_PARAMS, ExperimentConfig, experiment_from_dict, load_experiment
from .integrate import Record, integrate, model_field
from .net.codec import git_blob_sha1, load_model, save_model, write_csv, write_json
from .net.field import FieldModel
from .net.protocol import CURVE_COLUMNS, FORMAT_VERSION, HISTORY_COLUMNS, REPORT_COLUMNS, SWEEP_COLUMNS
from .plot import curve_svg, load_curve, load_scene, scene_png, scene_svg, write_svg
from .shared.config import set_dotted
from .shared.errors import CfmLabError, ConfigError, DataError
from .shared.rng import make_rng
from .trainer import History, leave_one_out_plan, resampler, train, train_energy, train_interpolation
from .trainer.loop import Sampler

logger = logging.getLogger("cfmlab")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
SCATTER_POINTS = 1000


# --------------------------- Data plumbing ---------------------------


def _sampler(spec: DatasetSpec) -> Tuple[Sampler, Optional[np.ndarray]]:
    if spec.kind == "csv":
        series = load_csv(spec.path, spec.time_column, spec.whiten)
        cloud = series.batch(spec.label)
        return resampler(cloud), cloud

    def draw(n: int, rng: np.random.Generator) -> np.ndarray:
        return sample_dataset(spec, n, rng)

    return draw, None


def _fixed(spec: DatasetSpec, n: int, seed: int, *key: str) -> np.ndarray:
    """A reproducible evaluation sample; CSV clouds are subsampled without replacement."""
    sampler, cloud = _sampler(spec)
    rng = make_rng(seed, "data", *key)
    if cloud is not None and n >= len(cloud):
        return cloud
    if cloud is not None:
        return cloud[rng.choice(len(cloud), size=n, replace=False)]
    return sampler(n, rng)


def _dataset_name(cfg: ExperimentConfig) -> str:
    def name(spec: DatasetSpec) -> str:
        return Path(spec.path).stem if spec.kind == "csv" else spec.kind

    return f"{name(cfg.source)}-{name(cfg.target)}"


def _write_run(out: Path, cfg: ExperimentConfig, model: FieldModel, history: History) -> None:
    out.mkdir(parents=True, exist_ok=True)
    data = save_model(out / "checkpoint.json", model)
    rows = [
        {
            "epoch": row.epoch,
            "train_loss": row.train_loss,
            "val_loss": row.val_loss,
            "elapsed_s": row.elapsed_s if cfg.record_timing else math.nan,
        }
        for row in history
    ]
    write_csv(out / "history.csv", HISTORY_COLUMNS, rows)
    write_json(
        out / "meta.json",
        {
            "format": FORMAT_VERSION,
            "config": cfg.to_dict(),
            "seed": cfg.seed,
            "checkpoint_sha1": git_blob_sha1(data),
            "wall_clock_s": history.wall_clock_s,
            "n_checks": len(history),
            "steps_failed": history.steps_failed,
            "stopped": history.stopped,
        },
    )
    logger.info("wrote %s (%d checks, stopped by %s)", out / "checkpoint.json", len(history), history.stopped)


# --------------------------- Commands ---------------------------


def cmd_train(cfg: ExperimentConfig, out: Path) -> FieldModel:
    source, _ = _sampler(cfg.source)
    target, _ = _sampler(cfg.target)
    val_source = _fixed(cfg.source, cfg.train.val_size, cfg.seed, "validation", "source")
    val_target = _fixed(cfg.target, cfg.train.val_size, cfg.seed, "validation", "target")
    logger.info("training %s (%s) on %s", cfg.run_id, cfg.algorithm, _dataset_name(cfg))
    model, history = train(cfg.train, source, target, val_source, val_target)
    _write_run(out, cfg, model, history)
    return model


def cmd_eval(cfg: ExperimentConfig, out: Path, checkpoint: Path) -> List[Dict[str, Any]]:
    model = load_model(checkpoint)
    source = _fixed(cfg.source, cfg.eval.n_eval, cfg.seed, "eval", "source")
    target = _fixed(cfg.target, cfg.eval.n_eval, cfg.seed, "eval", "target")
    w2_ref = w2_squared(
        _fixed(cfg.source, cfg.eval.n_ref, cfg.seed, "reference", "source"),
        _fixed(cfg.target, cfg.eval.n_ref, cfg.seed, "reference", "target"),
    )
    logger.info("reference w2_sq %.5g", w2_ref)
    reports = evaluate_model(model, source, target, w2_ref, cfg.eval.integrator_settings(), cfg.eval.mmd_bandwidth_sq)
    rows = []
    for report in reports:
        rows.append(
            {
                "run_id": cfg.run_id,
                "algorithm": cfg.algorithm,
                "dataset": _dataset_name(cfg),
                "sigma": cfg.path.sigma,
                "seed": cfg.seed,
                "w2_sq": report.w2_sq,
                "pe": report.path_energy,
                "npe": report.npe,
                "nfe_mean": report.nfe_mean,
                "integrator": report.integrator,
                "n_steps": "" if report.n_steps is None else report.n_steps,
            }
        )
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "report.csv", REPORT_COLUMNS, rows)
    write_json(
        out / "report.json",
        {"run_id": cfg.run_id, "w2_ref": w2_ref, "rows": [r.to_dict() for r in reports]},
    )
    _write_trajectories(out, cfg, model, source, target)
    return rows


def _write_trajectories(out: Path, cfg: ExperimentConfig, model: FieldModel, source, target) -> None:
    k = min(cfg.eval.n_trajectories, len(source))
    grid = tuple(np.linspace(0.0, 1.0, cfg.eval.n_steps + 1))
    trajectories: List[List[List[float]]] = []
    if k:
        traj = integrate(model_field(model), source[:k], 0.0, 1.0, cfg.eval.settings_for("rk4"), Record(times=grid))
        stacked = np.stack(traj.states, axis=1)
        trajectories = stacked.tolist()
    write_json(
        out / "trajectories.json",
        {
            "source": source[:SCATTER_POINTS].tolist(),
            "target": target[:SCATTER_POINTS].tolist(),
            "trajectories": trajectories,
        },
    )


def _sweep_cell(raw: Dict[str, Any], seed: int, out: str) -> Dict[str, Any]:
    try:
        cfg = experiment_from_dict(raw, seed, out)
        cell_out = Path(out)
        model = cmd_train(cfg, cell_out)
        row = cmd_eval(cfg, cell_out, cell_out / "checkpoint.json")[0]
        source, _ = _sampler(cfg.source)
        target, _ = _sampler(cfg.target)
        ov = objective_variance(
            cfg.train, source, target, model_reference(model), cfg.eval.ov_samples, make_rng(seed, "objective-variance")
        )
        return {"ok": True, "w2_sq": row["w2_sq"], "npe": row["npe"], "ov": ov}
    except CfmLabError as exc:
        logger.warning("sweep cell %s failed: %s", out, exc)
        return {"ok": False, "error": str(exc)}
    except Exception as exc:
        logger.exception("sweep cell %s crashed", out)
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    if not values:
        return math.nan, math.nan
    return float(np.mean(values)), float(np.std(values))


def cmd_sweep(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> List[Dict[str, Any]]:
    sweep = cfg.sweep
    if not sweep.values:
        raise ConfigError("sweep needs at least one value", "sweep.values")
    table, key = SWEEP_PARAMS[sweep.param]
    cells = []
    for value in sweep.values:
        for seed in sweep.seeds:
            raw = cfg.to_dict()
            set_dotted(raw, f"{table}.{key}", value)
            raw["run_id"] = f"{cfg.run_id}-{sweep.param}={value}-seed{seed}"
            cells.append((value, seed, raw, str(out / f"{sweep.param}={value}" / f"seed={seed}")))

    logger.info("sweep over %s: %d cells on %d workers", sweep.param, len(cells), jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, *zip(*[(raw, seed, cell_out) for _, seed, raw, cell_out in cells])))
    else:
        results = [_sweep_cell(raw, seed, cell_out) for _, seed, raw, cell_out in cells]

    rows = []
    for value in sweep.values:
        got = [r for (v, _, _, _), r in zip(cells, results) if v == value]
        ok = [r for r in got if r["ok"]]
        row: Dict[str, Any] = {"param": sweep.param, "value": value, "n_ok": len(ok), "n_failed": len(got) - len(ok)}
        for metric in ("w2_sq", "npe", "ov"):
            row[f"{metric}_mean"], row[f"{metric}_std"] = _mean_std([r[metric] for r in ok])
        rows.append(row)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    return rows


def cmd_sb_eval(cfg: ExperimentConfig, out: Path, checkpoint: Path) -> BridgeCurve:
    model = load_model(checkpoint)
    n = cfg.eval.sb_samples
    q0 = _fixed(cfg.source, n, cfg.seed, "bridge", "source")
    q1 = _fixed(cfg.target, n, cfg.seed, "bridge", "target")
    settings = cfg.eval.settings_for(cfg.eval.integrators[0])
    curve = sb_error_curve(model, q0, q1, cfg.path.sigma, cfg.eval.sb_timepoints, n, settings, make_rng(cfg.seed, "bridge"))
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "sb_curve.csv", CURVE_COLUMNS, [{"t": t, "w2_sq": e} for t, e in curve.points])
    write_json(out / "sb_summary.json", {"run_id": cfg.run_id, "n_timepoints": len(curve.points), "mean_w2_sq": curve.mean})
    return curve


def cmd_ebm(cfg: ExperimentConfig, out: Path) -> Dict[str, Any]:
    if cfg.target.kind != "funnel":
        raise ConfigError("the energy pipeline targets the funnel density", "target.kind")
    ebm = replace(cfg.ebm, d=cfg.target.d)
    model, history = train_energy(cfg.train, ebm, funnel_log_density, funnel_grad_log_density)
    _write_run(out, cfg, model, history)
    estimates = []
    for settings in cfg.eval.integrator_settings():
        start = time.perf_counter()
        est = log_partition_details(
            model, funnel_log_density, ebm.n_partition, settings, ebm.d, make_rng(cfg.seed, "partition", settings.label)
        )
        seconds = time.perf_counter() - start
        logger.info("%s: log Z %.4f (nfe %d, ess %.0f)", settings.label, est.log_z, est.nfe, est.ess)
        estimates.append(
            {
                "integrator": settings.method,
                "n_steps": None if settings.method == "dopri5" else settings.n_steps,
                "log_z": est.log_z,
                "nfe": est.nfe,
                "ess": est.ess,
                "seconds": seconds,
            }
        )
    payload = {"run_id": cfg.run_id, "method": ebm.method, "k": ebm.n_partition, "estimates": estimates}
    write_json(out / "ebm.json", payload)
    return payload


def cmd_interpolate(cfg: ExperimentConfig, out: Path, holdout: Optional[int] = None) -> Dict[str, Any]:
    spec = cfg.source
    if spec.kind != "csv" or not spec.time_column:
        raise ConfigError("interpolation reads a CSV time series with a time_column", "source.time_column")
    holdout = holdout if holdout is not None else cfg.eval.holdout_index
    if holdout is None:
        raise ConfigError("no holdout index given", "eval.holdout_index")
    series = load_csv(spec.path, spec.time_column, spec.whiten)
    plan = leave_one_out_plan(series.groups, holdout)
    model, history = train_interpolation(cfg.train, plan)
    _write_run(out, cfg, model, history)
    settings = cfg.eval.settings_for(cfg.eval.integrators[0])
    w2 = leave_one_out_eval(model, plan, settings, make_rng(cfg.seed, "interpolate"), cfg.eval.n_eval)
    payload = {
        "run_id": cfg.run_id,
        "holdout_index": holdout,
        "holdout_label": series.labels[holdout],
        "t_start": plan.eval_t_start,
        "t_end": plan.eval_t_end,
        "w2_sq": w2,
    }
    write_json(out / "interpolation.json", payload)
    logger.info("held-out label %s: w2_sq %.5g", series.labels[holdout], w2)
    return payload


def cmd_plot(inputs: Sequence[Path], out: Path, png: bool = False, x: Optional[str] = None, y: Sequence[str] = ()) -> List[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in inputs:
        path = Path(path)
        target = out / f"{path.stem}.svg"
        if path.suffix == ".json":
            scene = load_scene(path)
            write_svg(target, scene_svg(scene))
            if png:
                scene_png(scene, out / f"{path.stem}.png")
        elif path.suffix == ".csv":
            xs, series = load_curve(path, x, y)
            write_svg(target, curve_svg(xs, series))
        else:
            raise DataError(f"cannot plot {path}: expected .json or .csv")
        written.append(target)
    return written


# --------------------------- Entry point ---------------------------


def _config(args) -> ExperimentConfig:
    return load_experiment(args.config, args.set, args.seed, args.out)


def _checkpoint(args, cfg: ExperimentConfig) -> Path:
    return Path(args.checkpoint) if args.checkpoint else Path(cfg.output_dir) / "checkpoint.json"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="TOML experiment file")
    common.add_argument("--seed", type=int, default=None, help="Seed (overrides the file and FLOWMATCH_SEED)")
    common.add_argument("--out", type=str, default=None, help="Output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override a dotted config key")
    common.add_argument("--log-level", type=str, default="INFO", help="Logging level")

    parser = argparse.ArgumentParser(prog="cfmlab", description="cfmlab - conditional flow matching experiments")
    sub = parser.add_subparsers(dest="mode", required=True)

    sub.add_parser("train", parents=[common], help="Train a flow and write checkpoint/history/meta")
    for name, text in (("eval", "Evaluate a checkpoint"), ("sb-eval", "Bridge error curve of a checkpoint")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", type=str, default=None, help="Checkpoint path (default OUT/checkpoint.json)")
    sweep_p = sub.add_parser("sweep", parents=[common], help="Train and evaluate over a parameter grid")
    sweep_p.add_argument("--jobs", type=int, default=1, help="Parallel worker processes")
    sub.add_parser("ebm", parents=[common], help="Energy-based funnel pipeline")
    interp_p = sub.add_parser("interpolate", parents=[common], help="Leave-one-out interpolation on a CSV time series")
    interp_p.add_argument("--holdout", type=int, default=None, help="Index of the held-out timepoint")
    plot_p = sub.add_parser("plot", parents=[common], help="Render trajectory JSON or CSV curves to SVG")
    plot_p.add_argument("inputs", nargs="+", help="trajectories.json or CSV files")
    plot_p.add_argument("--png", action="store_true", help="Also rasterize scenes to PNG")
    plot_p.add_argument("--x", type=str, default=None, help="CSV column for the x axis")
    plot_p.add_argument("--y", action="append", default=[], help="CSV column(s) to draw")
    return parser


def _dispatch(args) -> None:
    if args.mode == "plot":
        cmd_plot([Path(p) for p in args.inputs], Path(args.out or "."), args.png, args.x, args.y)
        return
    cfg = _config(args)
    out = Path(cfg.output_dir)
    if args.mode == "train":
        cmd_train(cfg, out)
    elif args.mode == "eval":
        cmd_eval(cfg, out, _checkpoint(args, cfg))
    elif args.mode == "sweep":
        cmd_sweep(cfg, out, max(1, args.jobs))
    elif args.mode == "sb-eval":
        cmd_sb_eval(cfg, out, _checkpoint(args, cfg))
    elif args.mode == "ebm":
        cmd_ebm(cfg, out)
    elif args.mode == "interpolate":
        cmd_interpolate(cfg, out, args.holdout)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format=LOG_FORMAT, stream=sys.stderr, force=True)
    try:
        _dispatch(args)
    except CfmLabError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O failure: %s", exc)
        return 4
    return 0
