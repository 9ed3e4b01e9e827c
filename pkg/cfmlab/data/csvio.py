from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..shared.errors import DataError, ParseError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Whitening:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


@dataclass
class PointCloudSeries:
    """Point clouds grouped by time label, ordered by label."""

    columns: List[str]
    groups: List[Tuple[float, np.ndarray]]
    whitening: Optional[Whitening] = None

    @property
    def labels(self) -> List[float]:
        return [label for label, _ in self.groups]

    def batch(self, label: Optional[float] = None) -> np.ndarray:
        if label is None:
            if len(self.groups) != 1:
                raise DataError("file holds several time labels; pick one")
            return self.groups[0][1]
        for lab, pts in self.groups:
            if lab == label:
                return pts
        raise DataError(f"no rows with time label {label}")


def _parse(value: str, row: int, column: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise ParseError(f"not a number: {value!r}", row, column) from None
    if not np.isfinite(out):
        raise ParseError(f"non-finite value: {value!r}", row, column)
    return out


def load_csv(path, time_column: Optional[str] = None, whiten: bool = False) -> PointCloudSeries:
    """Read a comma-separated point cloud with a header row.

    With ``time_column`` the rows are grouped by that column's value; whitening
    statistics are taken over all rows together.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if time_column is not None and time_column not in header:
            raise DataError(f"{path}: no column named {time_column!r}")
        coord_cols = [h for h in header if h != time_column]
        if not coord_cols:
            raise DataError(f"{path}: no coordinate columns")
        grouped: Dict[float, List[List[float]]] = {}
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(row)}", row_no, "*")
            cells = dict(zip(header, row))
            label = _parse(cells[time_column], row_no, time_column) if time_column else 0.0
            grouped.setdefault(label, []).append([_parse(cells[c], row_no, c) for c in coord_cols])
    if not grouped:
        raise DataError(f"{path}: no data rows")
    groups = [(label, np.asarray(grouped[label], dtype=np.float64)) for label in sorted(grouped)]
    for label, pts in groups:
        if pts.shape[0] == 0:
            raise DataError(f"{path}: empty group for time label {label}")

    whitening = None
    if whiten:
        union = np.vstack([pts for _, pts in groups])
        mean = union.mean(axis=0)
        std = union.std(axis=0)
        if np.any(std == 0):
            raise DataError(f"{path}: constant column cannot be whitened")
        whitening = Whitening(mean, std)
        groups = [(label, whitening.apply(pts)) for label, pts in groups]
    logger.info("loaded %s: %d groups, %d columns", path, len(groups), len(coord_cols))
    return PointCloudSeries(coord_cols, groups, whitening)
