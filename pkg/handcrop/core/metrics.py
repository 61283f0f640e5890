"""
Distances between hands and evaluation metrics.

The four crop-ambiguity distances compare a population hand to a reference:
crop pixel distance (keypoint centroids), centered 2D error (keypoint pattern
with centroids removed), absolute 3D error and root-relative 3D error. The
evaluation metrics are MPJPE (root-subtracted), MRRPE (left/right root
offset) and 2D reprojection error. All distances are averages of
per-corresponding-joint Euclidean distances.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from .camera import CameraIntrinsics, project
from .exceptions import FrameError
from .hand_model import INDEX_MCP, PINKY_MCP, WRIST, KeypointSet2D, KeypointSet3D

logger = logging.getLogger(__name__)

RECORD_FIELDS = ("pair_id", "crop_px_dist", "centered_2d_err", "abs_3d_err", "rootrel_3d_err")
COLLINEAR_TOLERANCE = 1e-9


@dataclass(frozen=True)
class AmbiguityRecord:
    """Distances between one population hand and the reference (one scatter point)."""

    pair_id: str
    crop_px_dist: float
    centered_2d_err: float
    abs_3d_err: float
    rootrel_3d_err: float

    def __post_init__(self):
        for name in RECORD_FIELDS[1:]:
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise ValidationError(
                    _('%(name)s must be finite and non-negative, got %(value)s.') % {'name': name, 'value': value},
                    code='range',
                )
            object.__setattr__(self, name, value)
        object.__setattr__(self, "pair_id", str(self.pair_id))

    def metric(self, name: str) -> float:
        return getattr(self, name)


@dataclass(frozen=True, eq=False)
class RootFrame:
    """
    Orientation and origin of a hand's root frame.

    ``rotation`` holds the frame axes as columns in camera coordinates, so a
    point ``p`` has local coordinates ``rotation.T @ (p - origin)``.
    """

    rotation: np.ndarray
    origin: np.ndarray

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.origin) @ self.rotation

    def transported(self, rotation, translation) -> "RootFrame":
        """The frame carried along by a rigid motion ``x -> R x + t``."""
        rotation = np.asarray(rotation, dtype=np.float64)
        return RootFrame(rotation @ self.rotation, rotation @ self.origin + np.asarray(translation))


def root_frame(keypoints) -> RootFrame:
    """
    Build a root frame from keypoints alone.

    Origin at the wrist, x toward the index MCP, z along the normalized
    ``(index_mcp - wrist) x (pinky_mcp - wrist)``, y completing a right-handed
    orthonormal basis.

    Raises:
        FrameError: If wrist, index MCP and pinky MCP are collinear.
    """
    joints = KeypointSet3D.coerce(keypoints).joints
    origin = joints[WRIST]
    to_index = joints[INDEX_MCP] - origin
    to_pinky = joints[PINKY_MCP] - origin
    normal = np.cross(to_index, to_pinky)
    scale = np.linalg.norm(to_index) * np.linalg.norm(to_pinky)
    if scale == 0 or np.linalg.norm(normal) <= COLLINEAR_TOLERANCE * scale:
        raise FrameError("Wrist, index MCP and pinky MCP are collinear; the root frame is undefined.")
    x_axis = to_index / np.linalg.norm(to_index)
    z_axis = normal / np.linalg.norm(normal)
    y_axis = np.cross(z_axis, x_axis)
    return RootFrame(np.stack([x_axis, y_axis, z_axis], axis=1), origin.copy())


def _mean_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def crop_pixel_distance(a, b) -> float:
    """Distance in pixels between the centroids of two 2D keypoint sets."""
    a = KeypointSet2D.coerce(a)
    b = KeypointSet2D.coerce(b)
    return float(np.linalg.norm(a.centroid - b.centroid))


def centered_2d_error(a, b) -> float:
    """Mean per-joint pixel distance after moving both centroids to the origin."""
    a = KeypointSet2D.coerce(a).points
    b = KeypointSet2D.coerce(b).points
    return _mean_distance(a - a.mean(axis=0), b - b.mean(axis=0))


def absolute_3d_error(a, b) -> float:
    """Mean per-joint distance in mm, no alignment."""
    return _mean_distance(KeypointSet3D.coerce(a).joints, KeypointSet3D.coerce(b).joints)


def root_relative_3d_error(a, b, frame_a: Optional[RootFrame] = None, frame_b: Optional[RootFrame] = None) -> float:
    """
    Mean per-joint distance in mm after expressing each hand in its own root frame.

    Frames default to ``root_frame`` of each keypoint set.

    Raises:
        FrameError: If a frame has to be built from degenerate keypoints.
    """
    a = KeypointSet3D.coerce(a).joints
    b = KeypointSet3D.coerce(b).joints
    frame_a = frame_a or root_frame(a)
    frame_b = frame_b or root_frame(b)
    return _mean_distance(frame_a.to_local(a), frame_b.to_local(b))


def mpjpe(pred, gt) -> float:
    """Mean per-joint position error in mm after subtracting the wrist from each set."""
    pred = KeypointSet3D.coerce(pred).joints
    gt = KeypointSet3D.coerce(gt).joints
    return _mean_distance(pred - pred[WRIST], gt - gt[WRIST])


def mrrpe(pred_left, pred_right, gt_left, gt_right) -> float:
    """Error in mm of the predicted right-minus-left wrist offset."""
    predicted = KeypointSet3D.coerce(pred_right).root - KeypointSet3D.coerce(pred_left).root
    expected = KeypointSet3D.coerce(gt_right).root - KeypointSet3D.coerce(gt_left).root
    return float(np.linalg.norm(predicted - expected))


def reprojection_error_2d(pred3d, cam: CameraIntrinsics, gt2d) -> float:
    """
    Mean per-joint pixel distance between projected 3D keypoints and 2D ground truth.

    Raises:
        BehindCameraError: If a predicted joint is behind the camera.
    """
    return _mean_distance(project(cam, pred3d).points, KeypointSet2D.coerce(gt2d).points)


def ambiguity_distances(pair_id: str, reference2d, reference3d, hand2d, hand3d) -> AmbiguityRecord:
    """All four ambiguity distances between a hand and the reference."""
    return AmbiguityRecord(
        pair_id=pair_id,
        crop_px_dist=crop_pixel_distance(reference2d, hand2d),
        centered_2d_err=centered_2d_error(reference2d, hand2d),
        abs_3d_err=absolute_3d_error(reference3d, hand3d),
        rootrel_3d_err=root_relative_3d_error(reference3d, hand3d),
    )


@dataclass(frozen=True, eq=False)
class FrameKeypoints:
    """
    Predictions and ground truth of one frame; absent hands are ``None``.

    ``gt2d_left``/``gt2d_right`` are 2D annotations used for reprojection error.
    """

    frame_id: str
    pred_left: Optional[KeypointSet3D] = None
    pred_right: Optional[KeypointSet3D] = None
    gt_left: Optional[KeypointSet3D] = None
    gt_right: Optional[KeypointSet3D] = None
    gt2d_left: Optional[KeypointSet2D] = None
    gt2d_right: Optional[KeypointSet2D] = None


@dataclass(frozen=True)
class FrameMetrics:
    frame_id: str
    mpjpe: List[float]
    mrrpe: Optional[float]
    reprojection: List[float]


@dataclass(frozen=True)
class BatchMetrics:
    """
    Aggregated metrics over frames.

    Means are ``None`` when no frame contributed; ``skipped_*`` count frames
    where a hand needed by that metric was absent.
    """

    frames: List[FrameMetrics]
    mean_mpjpe: Optional[float]
    mean_mrrpe: Optional[float]
    mean_reprojection: Optional[float]
    hand_count: int
    skipped_mrrpe: int
    skipped_reprojection: int

    def as_dict(self) -> dict:
        return {
            "frames": len(self.frames),
            "hands": self.hand_count,
            "mpjpe_mm": self.mean_mpjpe,
            "mrrpe_mm": self.mean_mrrpe,
            "reprojection_px": self.mean_reprojection,
            "skipped_mrrpe": self.skipped_mrrpe,
            "skipped_reprojection": self.skipped_reprojection,
        }


def evaluate_frame(frame: FrameKeypoints, cam: Optional[CameraIntrinsics]) -> FrameMetrics:
    errors, reprojection = [], []
    for pred, gt, gt2d in (
        (frame.pred_left, frame.gt_left, frame.gt2d_left),
        (frame.pred_right, frame.gt_right, frame.gt2d_right),
    ):
        if pred is not None and gt is not None:
            errors.append(mpjpe(pred, gt))
        if pred is not None and gt2d is not None and cam is not None:
            reprojection.append(reprojection_error_2d(pred, cam, gt2d))
    hands = (frame.pred_left, frame.pred_right, frame.gt_left, frame.gt_right)
    relative = mrrpe(*hands) if all(hand is not None for hand in hands) else None
    return FrameMetrics(frame.frame_id, errors, relative, reprojection)


def _mean(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if len(values) else None


def evaluate_batch(frames: Sequence[FrameKeypoints], cam: Optional[CameraIntrinsics] = None, workers: int = 1) -> BatchMetrics:
    """
    Evaluate frames, optionally on a thread pool, aggregating in input order.

    MPJPE averages over every hand with both prediction and ground truth,
    MRRPE over frames with both hands present in both, reprojection over
    hands with 2D annotations.
    """
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda frame: evaluate_frame(frame, cam), frames))
    else:
        results = [evaluate_frame(frame, cam) for frame in frames]

    hand_errors = [value for result in results for value in result.mpjpe]
    relative = [result.mrrpe for result in results if result.mrrpe is not None]
    reprojection = [value for result in results for value in result.reprojection]
    batch = BatchMetrics(
        frames=results,
        mean_mpjpe=_mean(hand_errors),
        mean_mrrpe=_mean(relative),
        mean_reprojection=_mean(reprojection),
        hand_count=len(hand_errors),
        skipped_mrrpe=len(results) - len(relative),
        skipped_reprojection=sum(1 for result in results if not result.reprojection),
    )
    logger.info(
        f"Evaluated {len(results)} frames: MPJPE {batch.mean_mpjpe}, MRRPE {batch.mean_mrrpe} "
        f"({batch.skipped_mrrpe} skipped)"
    )
    return batch
