"""Typed experiment settings: one validated view over every [table] of a config file."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from .data.synthetic import DatasetSpec
from .integrate import IntegratorSettings
from .paths import PathSpec
from .shared.config import apply_overrides, load_toml, read_table, strip_none, typed_value
from .shared.errors import ConfigError
from .shared.rng import resolve_seed
from .trainer.energy import EbmConfig
from .trainer.loop import TrainConfig

ALGORITHMS = ("fm", "icfm", "otcfm", "sbcfm")
SWEEP_PARAMS = {
    "sigma": ("path", "sigma"),
    "batch_size": ("coupling", "ot_batch_size"),
    "aggregation_m": ("train", "aggregation_m"),
}

_TOP_KEYS = {"run_id", "algorithm", "seed", "output_dir", "record_timing"}
_TABLES = ("path", "coupling", "train", "source", "target", "eval", "ebm", "sweep")
_PATH_KEYS = {"sigma", "variant"}
_COUPLING_KEYS = {"epsilon", "ot_batch_size", "sinkhorn_max_iters", "sinkhorn_tol"}
_TRAIN_KEYS = {
    "batch_size",
    "max_epochs",
    "patience",
    "val_interval",
    "steps_per_epoch",
    "lr",
    "weight_decay",
    "grad_clip_norm",
    "hidden",
    "aggregation_m",
    "wall_clock_limit_seconds",
    "val_size",
}
_DATASET_KEYS = {"kind", "d", "path", "time_column", "label", "whiten"}
_EVAL_KEYS = {
    "n_eval",
    "n_ref",
    "integrators",
    "n_steps",
    "atol",
    "rtol",
    "nfe_grid",
    "mmd_bandwidth_sq",
    "sb_timepoints",
    "sb_samples",
    "n_trajectories",
    "ov_samples",
    "holdout_index",
}
_EBM_KEYS = set(EbmConfig.__dataclass_fields__)
_SWEEP_KEYS = {"param", "values", "seeds"}


@dataclass(frozen=True)
class EvalConfig:
    n_eval: int = 10_000
    n_ref: int = 10_000
    integrators: Tuple[str, ...] = ("rk4", "dopri5")
    n_steps: int = 100
    atol: float = 1e-5
    rtol: float = 1e-5
    nfe_grid: Optional[Tuple[int, ...]] = None
    mmd_bandwidth_sq: Optional[float] = None
    sb_timepoints: int = 20
    sb_samples: int = 1000
    n_trajectories: int = 16
    ov_samples: int = 10_000
    holdout_index: Optional[int] = None

    def __post_init__(self) -> None:
        if self.n_eval < 1 or self.n_ref < 1:
            raise ConfigError("n_eval and n_ref must be >= 1", "eval.n_eval")
        if self.nfe_grid is not None and any(k < 1 for k in self.nfe_grid):
            raise ConfigError("nfe_grid entries must be >= 1", "eval.nfe_grid")
        for method in self.integrators:
            self.settings_for(method)

    def settings_for(self, method: str, n_steps: Optional[int] = None) -> IntegratorSettings:
        return IntegratorSettings(method, n_steps or self.n_steps, self.atol, self.rtol)

    def integrator_settings(self) -> List[IntegratorSettings]:
        """Euler at each step count of nfe_grid plus one adaptive run, or the configured list."""
        if self.nfe_grid:
            return [self.settings_for("euler", k) for k in self.nfe_grid] + [self.settings_for("dopri5")]
        return [self.settings_for(m) for m in self.integrators]

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["integrators"] = list(self.integrators)
        out["nfe_grid"] = None if self.nfe_grid is None else list(self.nfe_grid)
        return out


@dataclass(frozen=True)
class SweepConfig:
    param: str = "sigma"
    values: Tuple[Any, ...] = ()
    seeds: Tuple[int, ...] = (0,)

    def __post_init__(self) -> None:
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"cannot sweep {self.param!r}; pick one of {sorted(SWEEP_PARAMS)}", "sweep.param")

    def to_dict(self) -> dict:
        return {"param": self.param, "values": list(self.values), "seeds": list(self.seeds)}


@dataclass(frozen=True)
class ExperimentConfig:
    run_id: str
    algorithm: str
    seed: int
    source: DatasetSpec
    target: DatasetSpec
    train: TrainConfig
    eval: EvalConfig
    ebm: EbmConfig
    sweep: SweepConfig
    output_dir: str = "out"
    record_timing: bool = False
    raw: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    @property
    def path(self) -> PathSpec:
        return self.train.path

    def to_dict(self) -> dict:
        """Plain nested dict that ``experiment_from_dict`` turns back into this config."""
        return strip_none(_with_seed(self.raw, self.seed, self.output_dir))


def _with_seed(raw: Mapping[str, Any], seed: int, output_dir: str) -> dict:
    out = copy.deepcopy(dict(raw))
    out["seed"] = seed
    out["output_dir"] = output_dir
    return out


def _path_spec(algorithm: str, table: Mapping[str, Any]) -> PathSpec:
    sigma = typed_value(table, "sigma", float, "path", 0.1)
    variant = {"fm": "fm_gaussian", "icfm": "icfm", "otcfm": "otcfm", "sbcfm": "sbcfm"}[algorithm]
    requested = table.get("variant")
    if requested is not None and requested != variant:
        if not (algorithm == "icfm" and requested == "icfm_gaussian_source"):
            raise ConfigError(f"path variant {requested!r} does not fit algorithm {algorithm}", "path.variant")
        variant = requested
    return PathSpec(variant, sigma)


def _dataset(table: Mapping[str, Any], name: str, seed: int, default_kind: str) -> DatasetSpec:
    kind = table.get("kind", default_kind)
    d = typed_value(table, "d", int, name, 10 if kind == "funnel" else 2)
    label = typed_value(table, "label", float, name)
    whiten = typed_value(table, "whiten", bool, name, True)
    try:
        return DatasetSpec(kind, d, seed, table.get("path"), table.get("time_column"), label, whiten)
    except ConfigError as exc:
        raise ConfigError(exc.message, f"{name}.{exc.field}") from None


def _train(raw_train, raw_coupling, path: PathSpec, algorithm: str, seed: int) -> TrainConfig:
    coupling = {"fm": "independent", "icfm": "independent", "otcfm": "exact_ot", "sbcfm": "sinkhorn"}[algorithm]
    hidden = raw_train.get("hidden", [64, 64, 64])
    if not isinstance(hidden, list) or not hidden:
        raise ConfigError("hidden must be a non-empty list of widths", "train.hidden")
    kwargs = dict(
        path=path,
        coupling=coupling,
        epsilon=typed_value(raw_coupling, "epsilon", float, "coupling"),
        ot_batch_size=typed_value(raw_coupling, "ot_batch_size", int, "coupling"),
        sinkhorn_max_iters=typed_value(raw_coupling, "sinkhorn_max_iters", int, "coupling", 10_000),
        sinkhorn_tol=typed_value(raw_coupling, "sinkhorn_tol", float, "coupling", 1e-8),
        batch_size=typed_value(raw_train, "batch_size", int, "train", 512),
        max_epochs=typed_value(raw_train, "max_epochs", int, "train", 1000),
        patience=typed_value(raw_train, "patience", int, "train", 3),
        val_interval=typed_value(raw_train, "val_interval", int, "train", 10),
        steps_per_epoch=typed_value(raw_train, "steps_per_epoch", int, "train"),
        lr=typed_value(raw_train, "lr", float, "train", 1e-3),
        weight_decay=typed_value(raw_train, "weight_decay", float, "train", 1e-5),
        grad_clip_norm=typed_value(raw_train, "grad_clip_norm", float, "train"),
        hidden=tuple(typed_value({"w": w}, "w", int, "train.hidden") for w in hidden),
        seed=seed,
        aggregation_m=typed_value(raw_train, "aggregation_m", int, "train", 1),
        wall_clock_limit_seconds=typed_value(raw_train, "wall_clock_limit_seconds", float, "train", 6000.0),
        val_size=typed_value(raw_train, "val_size", int, "train", 10_000),
    )
    return TrainConfig(**kwargs)


def _eval(table: Mapping[str, Any]) -> EvalConfig:
    grid = table.get("nfe_grid")
    integrators = table.get("integrators", ["rk4", "dopri5"])
    if isinstance(integrators, str):
        integrators = [integrators]
    defaults = EvalConfig()
    return EvalConfig(
        n_eval=typed_value(table, "n_eval", int, "eval", defaults.n_eval),
        n_ref=typed_value(table, "n_ref", int, "eval", defaults.n_ref),
        integrators=tuple(integrators),
        n_steps=typed_value(table, "n_steps", int, "eval", defaults.n_steps),
        atol=typed_value(table, "atol", float, "eval", defaults.atol),
        rtol=typed_value(table, "rtol", float, "eval", defaults.rtol),
        nfe_grid=None if grid is None else tuple(int(k) for k in grid),
        mmd_bandwidth_sq=typed_value(table, "mmd_bandwidth_sq", float, "eval"),
        sb_timepoints=typed_value(table, "sb_timepoints", int, "eval", defaults.sb_timepoints),
        sb_samples=typed_value(table, "sb_samples", int, "eval", defaults.sb_samples),
        n_trajectories=typed_value(table, "n_trajectories", int, "eval", defaults.n_trajectories),
        ov_samples=typed_value(table, "ov_samples", int, "eval", defaults.ov_samples),
        holdout_index=typed_value(table, "holdout_index", int, "eval"),
    )


def _ebm(table: Mapping[str, Any]) -> EbmConfig:
    defaults = EbmConfig()
    kwargs = {}
    for key in _EBM_KEYS:
        default = getattr(defaults, key)
        kind = type(default)
        kwargs[key] = typed_value(table, key, kind, "ebm", default)
    return EbmConfig(**kwargs)


def _sweep(table: Mapping[str, Any]) -> SweepConfig:
    values = table.get("values", [])
    seeds = table.get("seeds", [0])
    if not isinstance(values, list) or not isinstance(seeds, list):
        raise ConfigError("sweep values and seeds must be lists", "sweep.values")
    return SweepConfig(table.get("param", "sigma"), tuple(values), tuple(int(s) for s in seeds))


def experiment_from_dict(raw: Mapping[str, Any], seed: Optional[int] = None, output_dir: Optional[str] = None) -> ExperimentConfig:
    """Validate a nested config mapping; ``seed`` falls back to the file, then FLOWMATCH_SEED, then 0."""
    unknown = sorted(set(raw) - _TOP_KEYS - set(_TABLES))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", unknown[0])
    algorithm = raw.get("algorithm", "icfm")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}", "algorithm")
    file_seed = typed_value(raw, "seed", int, "seed") if "seed" in raw else None
    seed = resolve_seed(seed if seed is not None else file_seed)
    tables = {
        "path": read_table(raw, "path", _PATH_KEYS),
        "coupling": read_table(raw, "coupling", _COUPLING_KEYS),
        "train": read_table(raw, "train", _TRAIN_KEYS),
        "source": read_table(raw, "source", _DATASET_KEYS),
        "target": read_table(raw, "target", _DATASET_KEYS),
        "eval": read_table(raw, "eval", _EVAL_KEYS),
        "ebm": read_table(raw, "ebm", _EBM_KEYS),
        "sweep": read_table(raw, "sweep", _SWEEP_KEYS),
    }
    path = _path_spec(algorithm, tables["path"])
    source = _dataset(tables["source"], "source", seed, "gaussian")
    target = _dataset(tables["target"], "target", seed, "moons")
    if not path.needs_source and source.kind != "gaussian":
        raise ConfigError("fm requires a Gaussian source", "source.kind")
    if path.variant == "icfm_gaussian_source" and source.kind != "gaussian":
        raise ConfigError("the Gaussian-source path requires a Gaussian source", "source.kind")
    if source.kind != "csv" and target.kind != "csv" and source.d != target.d:
        raise ConfigError(f"source d={source.d} but target d={target.d}", "target.d")
    train = _train(tables["train"], tables["coupling"], path, algorithm, seed)
    return ExperimentConfig(
        run_id=str(raw.get("run_id", "run")),
        algorithm=algorithm,
        seed=seed,
        source=source,
        target=target,
        train=train,
        eval=_eval(tables["eval"]),
        ebm=_ebm(tables["ebm"]),
        sweep=_sweep(tables["sweep"]),
        output_dir=str(output_dir or raw.get("output_dir", "out")),
        record_timing=bool(raw.get("record_timing", False)),
        raw=dict(raw),
    )


def load_experiment(
    path=None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
) -> ExperimentConfig:
    raw = load_toml(path) if path is not None else {}
    return experiment_from_dict(apply_overrides(raw, overrides), seed, output_dir)
