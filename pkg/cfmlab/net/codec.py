from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence

import numpy as np

from ..shared.errors import CheckpointError, DataError
from .field import FieldModel


# Compact, key-sorted JSON; json writes floats with repr() so they round-trip exactly.


def dumps(payload: Mapping[str, Any]) -> str:
    return json.dumps(payload, separators=(",", ":"), sort_keys=True, allow_nan=True)


def write_json(path: Path, payload: Mapping[str, Any]) -> bytes:
    data = (dumps(payload) + "\n").encode("utf-8")
    Path(path).write_bytes(data)
    return data


def read_json(path: Path) -> Dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: malformed JSON ({exc})") from exc


def git_blob_sha1(data: bytes) -> str:
    header = f"blob {len(data)}\0".encode("ascii")
    return hashlib.sha1(header + data).hexdigest()


def model_to_dict(model: FieldModel) -> Dict[str, Any]:
    return {
        "layer_dims": [int(n) for n in model.layer_dims],
        "activation": model.activation,
        "weights": [[float(v) for v in w.ravel(order="C")] for w in model.weights],
        "biases": [[float(v) for v in b] for b in model.biases],
    }


def model_from_dict(payload: Mapping[str, Any]) -> FieldModel:
    try:
        dims = [int(n) for n in payload["layer_dims"]]
        weights = [
            np.asarray(flat, dtype=np.float64).reshape(dims[k], dims[k + 1])
            for k, flat in enumerate(payload["weights"])
        ]
        biases = [np.asarray(b, dtype=np.float64) for b in payload["biases"]]
        return FieldModel(dims, weights, biases, str(payload.get("activation", "selu")))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CheckpointError(f"invalid checkpoint: {exc}") from exc


def save_model(path: Path, model: FieldModel) -> bytes:
    return write_json(path, model_to_dict(model))


def load_model(path: Path) -> FieldModel:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return model_from_dict(read_json(path))


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row[k]) for k in columns})


def read_csv(path: Path) -> List[Dict[str, str]]:
    if not Path(path).is_file():
        raise DataError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value
