"""
SVG figures rendered with Django templates.

Coordinates are formatted with fixed precision so identical inputs give
byte-identical files.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from django.template.loader import render_to_string

from .camera import CameraIntrinsics
from .hand_model import JOINT_PARENTS, KeypointSet2D
from .metrics import AmbiguityRecord

WIDTH = 640
HEIGHT = 480
MARGIN_LEFT = 70
MARGIN_RIGHT = 150
MARGIN_TOP = 40
MARGIN_BOTTOM = 60

BUCKET_COLORS = {"near": "#1f5fbf", "mid": "#9a9a9a", "far": "#d62728"}
PLACEMENT_COLORS = ("#1f5fbf", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")

METRIC_LABELS = {
    "rootrel_3d_err": "root-relative 3D error (mm)",
    "abs_3d_err": "absolute 3D error (mm)",
}


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def nice_ticks(high: float, count: int = 5) -> List[float]:
    """Round tick values from 0 to at least ``high``."""
    if high <= 0:
        return [0.0, 1.0]
    raw = high / count
    magnitude = 10 ** math.floor(math.log10(raw))
    step = next(m * magnitude for m in (1, 2, 2.5, 5, 10) if m * magnitude >= raw)
    return [step * k for k in range(int(math.ceil(high / step - 1e-9)) + 1)]


def _tick_label(value: float) -> str:
    return f"{value:g}"


def crop_bucket(distance: float, near: float, far: float) -> str:
    if distance < near:
        return "near"
    if distance > far:
        return "far"
    return "mid"


@dataclass(frozen=True)
class _Axis:
    ticks: List[float]
    start: float
    length: float

    def position(self, value: float) -> float:
        return self.start + self.length * value / self.ticks[-1]


def scatter_svg(
    records: Sequence[AmbiguityRecord],
    metric: str = "rootrel_3d_err",
    near: float = 20.0,
    far: float = 100.0,
    title: str = "",
) -> str:
    """
    Centered 2D error against a 3D error, one point per record, colored by
    crop-distance bucket (near, intermediate, far).
    """
    xs = [record.centered_2d_err for record in records]
    ys = [record.metric(metric) for record in records]
    plot_width = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_height = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    x_axis = _Axis(nice_ticks(max(xs, default=0.0)), MARGIN_LEFT, plot_width)
    y_axis = _Axis(nice_ticks(max(ys, default=0.0)), HEIGHT - MARGIN_BOTTOM, -plot_height)

    points = []
    for record, x, y in zip(records, xs, ys):
        bucket = crop_bucket(record.crop_px_dist, near, far)
        points.append({
            "x": _fmt(x_axis.position(x)),
            "y": _fmt(y_axis.position(y)),
            "color": BUCKET_COLORS[bucket],
            "pair_id": record.pair_id,
        })
    context = {
        "width": WIDTH,
        "height": HEIGHT,
        "title": title,
        "left": MARGIN_LEFT,
        "right": WIDTH - MARGIN_RIGHT,
        "top": MARGIN_TOP,
        "bottom": HEIGHT - MARGIN_BOTTOM,
        "x_ticks": [{"at": _fmt(x_axis.position(t)), "label": _tick_label(t)} for t in x_axis.ticks],
        "y_ticks": [{"at": _fmt(y_axis.position(t)), "label": _tick_label(t)} for t in y_axis.ticks],
        "x_label": "centered 2D error (px)",
        "y_label": METRIC_LABELS.get(metric, metric),
        "points": points,
        "legend": [
            {"color": BUCKET_COLORS[bucket], "label": label, "y": MARGIN_TOP + 18 * row}
            for row, (bucket, label) in enumerate((
                ("near", f"crop < {near:g} px"),
                ("mid", f"{near:g} to {far:g} px"),
                ("far", f"crop > {far:g} px"),
            ))
        ],
        "legend_x": WIDTH - MARGIN_RIGHT + 15,
    }
    return render_to_string("handcrop/scatter.svg", context)


def skeleton_svg(cam: CameraIntrinsics, placements: Sequence[KeypointSet2D], labels: Sequence[str] = ()) -> str:
    """Overlay of 2D hand skeletons inside the image frame, one color per placement."""
    scale = min(1.0, WIDTH / cam.width)
    hands = []
    for index, placement in enumerate(placements):
        points = np.asarray(KeypointSet2D.coerce(placement).points) * scale
        bones = [
            {
                "x1": _fmt(points[parent, 0]), "y1": _fmt(points[parent, 1]),
                "x2": _fmt(points[joint, 0]), "y2": _fmt(points[joint, 1]),
            }
            for joint, parent in enumerate(JOINT_PARENTS) if parent >= 0
        ]
        hands.append({
            "color": PLACEMENT_COLORS[index % len(PLACEMENT_COLORS)],
            "bones": bones,
            "wrist": {"x": _fmt(points[0, 0]), "y": _fmt(points[0, 1])},
            "label": labels[index] if index < len(labels) else f"placement {index}",
        })
    context = {
        "width": _fmt(cam.width * scale),
        "height": _fmt(cam.height * scale),
        "center": {"x": _fmt(cam.ppx * scale), "y": _fmt(cam.ppy * scale)},
        "hands": hands,
    }
    return render_to_string("handcrop/skeletons.svg", context)
