from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .net.codec import read_csv, read_json
from .shared.errors import ParseError

# --------------------------- Scene colors ---------------------------

BACKGROUND = (255, 255, 255)
AXIS = (155, 165, 185)
SOURCE = (58, 123, 213)
TARGET = (15, 18, 25)
FLOW = (90, 200, 120)
CURVE_COLORS = [(58, 123, 213), (232, 93, 117), (90, 200, 120), (240, 190, 90), (15, 18, 25)]

CANVAS = 800
MARGIN = 0.1
POINT_RADIUS = 2
FLOW_WIDTH = 1


@dataclass
class Scene:
    """Source and target scatter plus flow trajectories, first two coordinates only."""

    source: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    target: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    trajectories: List[np.ndarray] = field(default_factory=list)


def _xy(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 2))
    if arr.ndim != 2:
        raise ParseError(f"expected a list of points, got shape {arr.shape}", 0, "points")
    if arr.shape[1] == 1:
        arr = np.hstack([arr, np.zeros((len(arr), 1))])
    return arr[:, :2]


def load_scene(path) -> Scene:
    payload = read_json(Path(path))
    try:
        return Scene(
            source=_xy(payload.get("source", [])),
            target=_xy(payload.get("target", [])),
            trajectories=[_xy(t) for t in payload.get("trajectories", [])],
        )
    except (AttributeError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}", 0, "trajectories") from exc


class View:
    """Square data window centered on the bounding box, widened by MARGIN on each side."""

    def __init__(self, points: Sequence[np.ndarray], size: int = CANVAS) -> None:
        stacked = [p for p in points if len(p)]
        if stacked:
            allp = np.vstack(stacked)
            lo, hi = allp.min(axis=0), allp.max(axis=0)
        else:
            lo, hi = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
        self.center = 0.5 * (lo + hi)
        half = 0.5 * float(np.max(hi - lo))
        self.half = (half if half > 0 else 1.0) * (1.0 + MARGIN)
        self.size = size

    def to_canvas(self, p: np.ndarray) -> np.ndarray:
        scale = self.size / (2.0 * self.half)
        x = (p[..., 0] - self.center[0] + self.half) * scale
        y = (self.center[1] + self.half - p[..., 1]) * scale
        return np.stack([x, y], axis=-1)

    def axes(self) -> List[Tuple[Tuple[float, float], Tuple[float, float]]]:
        """Axis segments through the data origin when it is in view, else along the border."""
        ox, oy = self.to_canvas(np.zeros(2))
        ox = min(max(ox, 0.0), float(self.size))
        oy = min(max(oy, 0.0), float(self.size))
        return [((0.0, oy), (float(self.size), oy)), ((ox, 0.0), (ox, float(self.size)))]


def _rgb(color) -> str:
    return "rgb({},{},{})".format(*color)


def _num(v: float) -> str:
    return f"{v:.2f}"


def _header(size: int) -> List[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="{_rgb(BACKGROUND)}"/>',
    ]


def _axis_lines(view: View) -> List[str]:
    return [
        f'<line x1="{_num(a[0])}" y1="{_num(a[1])}" x2="{_num(b[0])}" y2="{_num(b[1])}" stroke="{_rgb(AXIS)}" stroke-width="1"/>'
        for a, b in view.axes()
    ]


def scene_svg(scene: Scene) -> str:
    view = View([scene.source, scene.target] + list(scene.trajectories))
    lines = _header(view.size) + _axis_lines(view)
    for traj in scene.trajectories:
        pts = " ".join(f"{_num(x)},{_num(y)}" for x, y in view.to_canvas(traj))
        lines.append(f'<polyline points="{pts}" fill="none" stroke="{_rgb(FLOW)}" stroke-width="{FLOW_WIDTH}"/>')
    for points, color in ((scene.source, SOURCE), (scene.target, TARGET)):
        for x, y in view.to_canvas(points):
            lines.append(f'<circle cx="{_num(x)}" cy="{_num(y)}" r="{POINT_RADIUS}" fill="{_rgb(color)}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def curve_svg(x: np.ndarray, series: Dict[str, np.ndarray]) -> str:
    """Line plot of each series against ``x`` on the shared square window."""
    curves = [np.stack([x, y], axis=1) for y in series.values()]
    view = View(curves)
    lines = _header(view.size) + _axis_lines(view)
    for k, (name, curve) in enumerate(zip(series, curves)):
        keep = np.all(np.isfinite(curve), axis=1)
        pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in view.to_canvas(curve[keep]))
        color = CURVE_COLORS[k % len(CURVE_COLORS)]
        lines.append(f'<polyline points="{pts}" fill="none" stroke="{_rgb(color)}" stroke-width="2"><title>{name}</title></polyline>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def load_curve(path, x_column: Optional[str] = None, y_columns: Sequence[str] = ()) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    rows = read_csv(Path(path))
    if not rows:
        return np.zeros(0), {}
    columns = list(rows[0])
    x_column = x_column or columns[0]
    y_columns = list(y_columns) or [c for c in columns if c != x_column][:1]
    out = {}
    for col in [x_column] + y_columns:
        if col not in rows[0]:
            raise ParseError(f"no column {col!r}", 1, col)
        values = []
        for row_no, row in enumerate(rows, start=2):
            try:
                values.append(float(row[col]))
            except (TypeError, ValueError):
                raise ParseError(f"not a number: {row[col]!r}", row_no, col) from None
        out[col] = np.asarray(values)
    x = out.pop(x_column)
    return x, out


def write_svg(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


# --------------------------- Pygame raster ---------------------------


def scene_png(scene: Scene, path) -> None:
    """Off-screen raster of the same scene through pygame."""
    os.environ.setdefault("SDL_VIDEODRIVER", "dummy")
    os.environ.setdefault("PYGAME_HIDE_SUPPORT_PROMPT", "1")
    import pygame

    pygame.init()
    try:
        view = View([scene.source, scene.target] + list(scene.trajectories))
        surface = pygame.Surface((view.size, view.size))
        surface.fill(BACKGROUND)
        for a, b in view.axes():
            pygame.draw.line(surface, AXIS, a, b)
        for traj in scene.trajectories:
            pts = [tuple(p) for p in view.to_canvas(traj)]
            if len(pts) > 1:
                pygame.draw.lines(surface, FLOW, False, pts, FLOW_WIDTH)
        for points, color in ((scene.source, SOURCE), (scene.target, TARGET)):
            for x, y in view.to_canvas(points):
                pygame.draw.circle(surface, color, (int(round(x)), int(round(y))), POINT_RADIUS)
        pygame.image.save(surface, str(path))
    finally:
        pygame.quit()
