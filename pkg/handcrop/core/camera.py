"""
Pinhole camera, crop boxes and the intrinsics-aware positional encoding (KPE).

A KPE block for one image location is 16 values: the horizontal ray angle
theta_x encoded as ``sin(2^k t), cos(2^k t)`` interleaved for k = 0..3,
followed by the same 8 values for theta_y. The sparse encoding concatenates
the blocks of the four crop corners, in the order (min, min), (max, min),
(min, max), (max, max), and then the crop centre, 80 values in total.
Angles are computed in original image coordinates, before any crop resize.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from .exceptions import BehindCameraError
from .hand_model import HandParams, KeypointSet2D, KeypointSet3D, SkinnedHandModel, default_hand_model, posed_joints
from .validators import validate_array, validate_positive

logger = logging.getLogger(__name__)

FREQUENCIES = 2.0 ** np.arange(4)
BLOCK_SIZE = 4 * len(FREQUENCIES)
SPARSE_POINTS = 5
CENTER_BLOCK = 4


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    ppx: float
    ppy: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "fx", validate_positive(self.fx, "fx"))
        object.__setattr__(self, "fy", validate_positive(self.fy, "fy"))
        for name in ("ppx", "ppy"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ValidationError(_('%(name)s must be finite.') % {'name': name}, code='parameter')
            object.__setattr__(self, name, value)
        object.__setattr__(self, "width", int(validate_positive(self.width, "width")))
        object.__setattr__(self, "height", int(validate_positive(self.height, "height")))

    @classmethod
    def from_fov(cls, width: int, height: int, fov_degrees: float) -> "CameraIntrinsics":
        """
        Square-pixel camera with the given horizontal field of view.

        The principal point is the image centre.
        """
        fov = validate_positive(fov_degrees, "fov_degrees")
        if fov >= 180.0:
            raise ValidationError(_('fov_degrees must be below 180.'), code='range')
        focal = 0.5 * width / np.tan(np.radians(fov) / 2.0)
        return cls(focal, focal, width / 2.0, height / 2.0, width, height)

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.ppx], [0.0, self.fy, self.ppy], [0.0, 0.0, 1.0]])

    def as_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "ppx": self.ppx,
            "ppy": self.ppy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraIntrinsics":
        missing = [key for key in ("fx", "fy", "ppx", "ppy", "width", "height") if key not in data]
        if missing:
            raise ValidationError(
                _('Intrinsics are missing %(keys)s.') % {'keys': ', '.join(missing)},
                code='parameter',
            )
        return cls(data["fx"], data["fy"], data["ppx"], data["ppy"], data["width"], data["height"])

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics of the image resampled by ``factor``."""
        factor = validate_positive(factor, "factor")
        return CameraIntrinsics(
            self.fx * factor,
            self.fy * factor,
            self.ppx * factor,
            self.ppy * factor,
            max(1, int(round(self.width * factor))),
            max(1, int(round(self.height * factor))),
        )


@dataclass(frozen=True)
class CropBox:
    """Axis-aligned crop in image pixels; may extend past the image borders."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ValidationError(_('%(name)s must be finite.') % {'name': name}, code='parameter')
            object.__setattr__(self, name, value)
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(
                _('Crop box needs x_min < x_max and y_min < y_max, got %(box)s.') % {
                    'box': (self.x_min, self.y_min, self.x_max, self.y_max),
                },
                code='parameter',
            )

    @classmethod
    def from_center(cls, cx: float, cy: float, width: float, height: Optional[float] = None) -> "CropBox":
        height = width if height is None else height
        return cls(cx - width / 2.0, cy - height / 2.0, cx + width / 2.0, cy + height / 2.0)

    @classmethod
    def from_keypoints(cls, points, scale: float = 1.5) -> "CropBox":
        """
        Square crop around 2D keypoints, as used by crop-based estimators.

        The side is ``scale`` times the larger extent of the keypoints'
        bounding box, centred on that box.
        """
        points = KeypointSet2D.coerce(points).points
        scale = validate_positive(scale, "scale")
        low, high = points.min(axis=0), points.max(axis=0)
        side = max(float(np.max(high - low)) * scale, 1.0)
        center = (low + high) / 2.0
        return cls.from_center(center[0], center[1], side)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0])

    def sparse_points(self) -> np.ndarray:
        """Corners (min,min), (max,min), (min,max), (max,max), then the centre."""
        return np.array([
            [self.x_min, self.y_min],
            [self.x_max, self.y_min],
            [self.x_min, self.y_max],
            [self.x_max, self.y_max],
            self.center,
        ])

    def as_dict(self) -> dict:
        return {"x_min": self.x_min, "y_min": self.y_min, "x_max": self.x_max, "y_max": self.y_max}


@dataclass(frozen=True, eq=False)
class KpeEncoding:
    """Concatenated KPE blocks, one 16-value block per encoded image location."""

    values: np.ndarray

    def __post_init__(self):
        values = validate_array(self.values, (None,), "values")
        if values.size % BLOCK_SIZE:
            raise ValidationError(
                _('KPE length must be a multiple of %(size)s.') % {'size': BLOCK_SIZE},
                code='dimension',
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def point_count(self) -> int:
        return self.values.size // BLOCK_SIZE

    def block(self, index: int) -> np.ndarray:
        return self.values[index * BLOCK_SIZE:(index + 1) * BLOCK_SIZE]

    @property
    def center(self) -> np.ndarray:
        """Centre block of a sparse encoding."""
        return self.block(CENTER_BLOCK)


def project_points(cam: CameraIntrinsics, points) -> np.ndarray:
    """
    Project camera-frame points (N, 3) in mm to pixels (N, 2).

    Raises:
        BehindCameraError: For the first point with Z <= 0.
    """
    points = validate_array(points, (None, 3), "points")
    depth = points[:, 2]
    behind = np.flatnonzero(depth <= 0)
    if behind.size:
        raise BehindCameraError(behind[0], depth[behind[0]])
    u = cam.fx * points[:, 0] / depth + cam.ppx
    v = cam.fy * points[:, 1] / depth + cam.ppy
    return np.stack([u, v], axis=1)


def project(cam: CameraIntrinsics, pts) -> KeypointSet2D:
    """
    Project 3D keypoints: ``u = fx X / Z + ppx``, ``v = fy Y / Z + ppy``.

    Raises:
        BehindCameraError: If any joint has Z <= 0; ``index`` names the joint.
    """
    return KeypointSet2D(project_points(cam, KeypointSet3D.coerce(pts).joints))


def projection_jacobian(cam: CameraIntrinsics, points) -> np.ndarray:
    """Per-point derivative of the pixel position with respect to the 3D point, (N, 2, 3)."""
    points = np.asarray(points, dtype=np.float64)
    inverse_depth = 1.0 / points[:, 2]
    jacobian = np.zeros((len(points), 2, 3))
    jacobian[:, 0, 0] = cam.fx * inverse_depth
    jacobian[:, 0, 2] = -cam.fx * points[:, 0] * inverse_depth ** 2
    jacobian[:, 1, 1] = cam.fy * inverse_depth
    jacobian[:, 1, 2] = -cam.fy * points[:, 1] * inverse_depth ** 2
    return jacobian


def lift(cam: CameraIntrinsics, pts2d, depths) -> np.ndarray:
    """
    Back-project pixels to camera-frame points at the given depths (mm).

    Inverse of ``project_points`` for points in front of the camera.
    """
    pts2d = validate_array(pts2d, (None, 2), "pts2d")
    depths = validate_array(np.broadcast_to(depths, (len(pts2d),)), (len(pts2d),), "depths")
    if np.any(depths <= 0):
        raise ValidationError(_('Depths must be positive.'), code='range')
    x = (pts2d[:, 0] - cam.ppx) / cam.fx * depths
    y = (pts2d[:, 1] - cam.ppy) / cam.fy * depths
    return np.stack([x, y, depths], axis=1)


def pixel_angles(cam: CameraIntrinsics, x, y):
    """
    Ray angles of an image location: ``atan((x - ppx) / fx)``, ``atan((y - ppy) / fy)``.

    Works elementwise on arrays; both results lie in (-pi/2, pi/2).
    """
    theta_x = np.arctan((np.asarray(x, dtype=np.float64) - cam.ppx) / cam.fx)
    theta_y = np.arctan((np.asarray(y, dtype=np.float64) - cam.ppy) / cam.fy)
    if theta_x.ndim == 0 and theta_y.ndim == 0:
        return float(theta_x), float(theta_y)
    return theta_x, theta_y


def _sinusoid(angles: np.ndarray) -> np.ndarray:
    """Encode angles (...,) as (..., 8): sin, cos interleaved per frequency."""
    scaled = angles[..., None] * FREQUENCIES
    out = np.empty(angles.shape + (2 * len(FREQUENCIES),))
    out[..., 0::2] = np.sin(scaled)
    out[..., 1::2] = np.cos(scaled)
    return out


def encode_locations(cam: CameraIntrinsics, x, y) -> np.ndarray:
    """KPE blocks for arrays of pixel locations, shape (..., 16)."""
    theta_x, theta_y = pixel_angles(cam, np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    return np.concatenate([_sinusoid(np.asarray(theta_x)), _sinusoid(np.asarray(theta_y))], axis=-1)


def kpe_sparse(cam: CameraIntrinsics, box: CropBox) -> KpeEncoding:
    """Encode the four corners and the centre of a crop box (80 values)."""
    points = box.sparse_points()
    return KpeEncoding(encode_locations(cam, points[:, 0], points[:, 1]).reshape(-1))


def kpe_dense(cam: CameraIntrinsics, box: CropBox, grid: int) -> np.ndarray:
    """
    Dense KPE over a ``grid`` x ``grid`` subdivision of the crop.

    Cell ``(row, col)`` encodes its centre,
    ``(x_min + (col + 0.5) w / grid, y_min + (row + 0.5) h / grid)``.

    Returns:
        np.ndarray: Map of shape (grid, grid, 16), rows along y.
    """
    if isinstance(grid, bool) or int(grid) != grid or grid < 1:
        raise ValidationError(_('grid must be a positive integer, got %(grid)s.') % {'grid': grid}, code='range')
    grid = int(grid)
    steps = (np.arange(grid) + 0.5) / grid
    xs = box.x_min + steps * box.width
    ys = box.y_min + steps * box.height
    grid_x, grid_y = np.meshgrid(xs, ys)
    return encode_locations(cam, grid_x, grid_y)


def perspective_demo(
    cam: CameraIntrinsics,
    params: HandParams,
    offsets: Sequence[float],
    model: Optional[SkinnedHandModel] = None,
) -> List[KeypointSet2D]:
    """
    Project one 3D hand translated sideways across the field of view.

    Args:
        cam: Camera intrinsics.
        params: Hand pose; each placement adds ``(offset, 0, 0)`` mm to the
            root translation.
        offsets: Lateral shifts in mm.
        model: Hand model, the procedural default when omitted.

    Returns:
        list: One KeypointSet2D per offset, in order.

    Raises:
        BehindCameraError: If a placement puts a joint behind the camera.
    """
    model = model or default_hand_model()
    joints = posed_joints(model, params)
    projections = []
    for offset in offsets:
        placed = joints + np.array([float(offset), 0.0, 0.0])
        projections.append(project(cam, placed))
    logger.debug(f"Perspective demo projected {len(projections)} placements")
    return projections
