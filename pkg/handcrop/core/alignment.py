"""
Perspective-n-point alignment and the crop-ambiguity scan.

``pnp_align`` recovers the rigid pose that best aligns 3D keypoints to 2D
keypoints: a linear initialization (normalized DLT, or a plane homography for
near-coplanar points) projected onto SO(3), then Gauss-Newton on a left
rotation increment and the translation, with an Armijo backtracking line
search. ``pnp_align_with_shift`` does the same against a shifted copy of the
2D pattern, which places one pattern anywhere in the visual field.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from .camera import CameraIntrinsics, project, project_points, projection_jacobian
from .exceptions import DegenerateConfigurationError, InfeasibleSolutionError, NumericalError
from .hand_model import (
    NUM_JOINTS,
    POSE_DOF,
    HandParams,
    KeypointSet2D,
    KeypointSet3D,
    SkinnedHandModel,
    apply_pose_update,
    posed_joint_jacobian,
    posed_joints,
)
from .metrics import AmbiguityRecord, ambiguity_distances, mpjpe, root_relative_3d_error
from .rotations import matrix_to_rotvec, nearest_rotation, rotvec_to_matrix, skew

logger = logging.getLogger(__name__)

SCAN_MODES = ("raw", "pnp", "pnp_shift")
ARMIJO = 1e-4
MAX_ITERATIONS = 100
STEP_TOLERANCE = 1e-10
MIN_STEP_FRACTION = 1e-12
RANK_TOLERANCE = 1e-10
COLLINEAR_TOLERANCE = 1e-9
PLANAR_TOLERANCE = 1e-4
ORTHONORMAL_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class RigidPose:
    """Rotation and translation (mm) acting as ``x -> R x + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise ValidationError(_('A rigid pose needs a 3x3 rotation and a 3-vector.'), code='dimension')
        if (
            np.max(np.abs(rotation.T @ rotation - np.eye(3))) > ORTHONORMAL_TOLERANCE
            or abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOLERANCE
        ):
            raise ValidationError(_('Rotation is not a proper orthonormal matrix.'), code='parameter')
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def as_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "rotvec": matrix_to_rotvec(self.rotation).tolist(),
            "translation": self.translation.tolist(),
        }


@dataclass(frozen=True, eq=False)
class PnpSolution:
    """
    Result of one PnP solve.

    Attributes:
        pose: Recovered rigid pose.
        residual: Mean per-joint reprojection distance, px.
        iterations: Accepted Gauss-Newton steps.
        objective: Half sum of squared pixel residuals after each accepted step,
            starting with the initialization.
        initialization: ``"dlt"`` or ``"homography"``.
    """

    pose: RigidPose
    residual: float
    iterations: int
    objective: List[float]
    initialization: str


@dataclass(frozen=True, eq=False)
class ShiftedAlignment:
    """PnP alignment against a shifted reference pattern."""

    pose: RigidPose
    shift: np.ndarray
    residual: float
    joints: np.ndarray

    def __post_init__(self):
        if not self.residual >= 0:
            raise ValidationError(_('Residual must be non-negative.'), code='range')

    def as_dict(self) -> dict:
        return {
            "pose": self.pose.as_dict(),
            "shift": np.asarray(self.shift).tolist(),
            "residual": self.residual,
            "joints": self.joints.tolist(),
        }


def _hartley(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Similarity moving the centroid to the origin with mean distance sqrt(dim)."""
    dim = points.shape[1]
    centroid = points.mean(axis=0)
    spread = np.mean(np.linalg.norm(points - centroid, axis=1))
    if spread == 0:
        raise DegenerateConfigurationError("All correspondences coincide.")
    scale = np.sqrt(dim) / spread
    transform = np.eye(dim + 1)
    transform[:dim, :dim] *= scale
    transform[:dim, dim] = -scale * centroid
    return transform, scale * (points - centroid)


def _homogeneous(points: np.ndarray) -> np.ndarray:
    return np.hstack([points, np.ones((len(points), 1))])


def _null_vector(system: np.ndarray) -> np.ndarray:
    _basis, singular, vt = np.linalg.svd(system)
    if singular[-2] <= RANK_TOLERANCE * singular[0]:
        raise DegenerateConfigurationError("The linear pose system is rank deficient.")
    return vt[-1]


def _dlt_initialization(points3d: np.ndarray, rays: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    world_transform, world = _hartley(points3d)
    image_transform, image = _hartley(rays)
    world_h = _homogeneous(world)
    system = np.zeros((2 * len(world), 12))
    system[0::2, 0:4] = world_h
    system[0::2, 8:12] = -image[:, 0:1] * world_h
    system[1::2, 4:8] = world_h
    system[1::2, 8:12] = -image[:, 1:2] * world_h
    projection = np.linalg.inv(image_transform) @ _null_vector(system).reshape(3, 4) @ world_transform
    block = projection[:, :3]
    det = np.linalg.det(block)
    if abs(det) <= RANK_TOLERANCE * np.linalg.norm(block) ** 3:
        raise DegenerateConfigurationError("The recovered projection has a singular rotation block.")
    scale = np.sign(det) * np.linalg.svd(block, compute_uv=False).mean()
    return nearest_rotation(block / scale), projection[:, 3] / scale


def _homography_initialization(points3d: np.ndarray, rays: np.ndarray, frame: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    centroid = points3d.mean(axis=0)
    plane = (points3d - centroid) @ frame[:, :2]
    plane_transform, plane_n = _hartley(plane)
    image_transform, image = _hartley(rays)
    plane_h = _homogeneous(plane_n)
    system = np.zeros((2 * len(plane), 9))
    system[0::2, 0:3] = plane_h
    system[0::2, 6:9] = -image[:, 0:1] * plane_h
    system[1::2, 3:6] = plane_h
    system[1::2, 6:9] = -image[:, 1:2] * plane_h
    homography = np.linalg.inv(image_transform) @ _null_vector(system).reshape(3, 3) @ plane_transform
    scale = 0.5 * (np.linalg.norm(homography[:, 0]) + np.linalg.norm(homography[:, 1]))
    if homography[2, 2] < 0:
        scale = -scale
    first, second = homography[:, 0] / scale, homography[:, 1] / scale
    in_plane = nearest_rotation(np.column_stack([first, second, np.cross(first, second)]))
    rotation = in_plane @ frame.T
    return rotation, homography[:, 2] / scale - rotation @ centroid


def _initial_pose(points3d: np.ndarray, rays: np.ndarray) -> Tuple[np.ndarray, np.ndarray, str]:
    centered = points3d - points3d.mean(axis=0)
    _basis, singular, vt = np.linalg.svd(centered)
    if singular[0] == 0 or singular[1] <= COLLINEAR_TOLERANCE * singular[0]:
        raise DegenerateConfigurationError("3D keypoints are collinear; the pose is undetermined.")
    if singular[2] <= PLANAR_TOLERANCE * singular[0]:
        frame = vt.T.copy()
        if np.linalg.det(frame) < 0:
            frame[:, 2] *= -1.0
        rotation, translation = _homography_initialization(points3d, rays, frame)
        return rotation, translation, "homography"
    rotation, translation = _dlt_initialization(points3d, rays)
    return rotation, translation, "dlt"


def _move_in_front(points3d: np.ndarray, rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    depth = (points3d @ rotation.T + translation)[:, 2]
    if depth.min() > 0:
        return translation
    extent = (points3d.max(axis=0) - points3d.min(axis=0)).max()
    return translation + np.array([0.0, 0.0, extent - depth.min()])


def _residuals(points3d, pixels, cam, rotation, translation):
    camera_points = points3d @ rotation.T + translation
    if np.any(camera_points[:, 2] <= 0):
        return None, camera_points
    return (project_points(cam, camera_points) - pixels).reshape(-1), camera_points


def solve_pnp(points3d, pixels, cam: CameraIntrinsics) -> PnpSolution:
    """
    Rigid pose minimizing the reprojection error of ``points3d`` against ``pixels``.

    Raises:
        DegenerateConfigurationError: Collinear points or a rank-deficient system.
        InfeasibleSolutionError: If the refined pose puts a point behind the camera.
    """
    points3d = np.asarray(points3d, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64)
    if len(points3d) < 6 or len(points3d) != len(pixels):
        raise ValidationError(_('PnP needs at least 6 matching correspondences.'), code='dimension')
    rays = np.column_stack([(pixels[:, 0] - cam.ppx) / cam.fx, (pixels[:, 1] - cam.ppy) / cam.fy])
    rotation, translation, method = _initial_pose(points3d, rays)
    translation = _move_in_front(points3d, rotation, translation)

    residual, camera_points = _residuals(points3d, pixels, cam, rotation, translation)
    objective = 0.5 * float(residual @ residual)
    history = [objective]
    accepted = 0
    for iteration in range(MAX_ITERATIONS):
        rotated = camera_points - translation
        point_jacobian = np.concatenate([-skew(rotated), np.broadcast_to(np.eye(3), rotated.shape + (3,))], axis=2)
        jacobian = np.einsum("nab,nbk->nak", projection_jacobian(cam, camera_points), point_jacobian).reshape(-1, 6)
        step = np.linalg.lstsq(jacobian, -residual, rcond=None)[0]
        slope = float((jacobian.T @ residual) @ step)
        if not slope < 0:
            break
        fraction = 1.0
        while fraction >= MIN_STEP_FRACTION:
            trial_rotation = nearest_rotation(rotvec_to_matrix(fraction * step[:3]) @ rotation)
            trial_translation = translation + fraction * step[3:]
            trial_residual, trial_points = _residuals(points3d, pixels, cam, trial_rotation, trial_translation)
            if trial_residual is not None:
                trial_objective = 0.5 * float(trial_residual @ trial_residual)
                if trial_objective <= objective + ARMIJO * fraction * slope:
                    break
            fraction *= 0.5
        else:
            logger.debug(f"PnP line search stalled after {iteration} iterations")
            break
        rotation, translation = trial_rotation, trial_translation
        residual, camera_points, objective = trial_residual, trial_points, trial_objective
        history.append(objective)
        accepted += 1
        if np.linalg.norm(fraction * step) < STEP_TOLERANCE:
            break

    if np.any(camera_points[:, 2] <= 0):
        raise InfeasibleSolutionError("PnP converged to a pose with points behind the camera.")
    mean_residual = float(np.mean(np.linalg.norm(residual.reshape(-1, 2), axis=1)))
    logger.debug(f"PnP ({method}) finished: {accepted} steps, residual {mean_residual:.3g} px")
    return PnpSolution(RigidPose(rotation, translation), mean_residual, accepted, history, method)


def pnp_align(ref2d, hand3d, cam: CameraIntrinsics) -> Tuple[RigidPose, float]:
    """
    Rigid pose best aligning a 3D hand to reference 2D keypoints.

    Returns:
        tuple: ``(RigidPose, residual)``, residual in mean pixels per joint.
    """
    solution = solve_pnp(KeypointSet3D.coerce(hand3d).joints, KeypointSet2D.coerce(ref2d).points, cam)
    return solution.pose, solution.residual


def pnp_align_with_shift(ref2d, hand3d, cam: CameraIntrinsics, shift) -> ShiftedAlignment:
    """Align ``hand3d`` to the reference pattern moved by ``shift`` pixels."""
    shift = np.asarray(shift, dtype=np.float64).reshape(2)
    joints = KeypointSet3D.coerce(hand3d).joints
    pose, residual = pnp_align(KeypointSet2D.coerce(ref2d).shifted(shift), joints, cam)
    return ShiftedAlignment(pose=pose, shift=shift, residual=residual, joints=pose.apply(joints))


def sample_shifts(pattern, cam: CameraIntrinsics, count: int, margin: float, rng: np.random.Generator) -> np.ndarray:
    """
    Draw 2D shifts keeping every shifted keypoint at least ``margin`` px inside the image.

    Raises:
        ValidationError: If the pattern does not fit inside the margins.
    """
    points = KeypointSet2D.coerce(pattern).points
    low = margin - points.min(axis=0)
    high = np.array([cam.width, cam.height]) - margin - points.max(axis=0)
    if np.any(low > high):
        raise ValidationError(
            _('The keypoint pattern does not fit inside a %(margin)s px margin.') % {'margin': margin},
            code='range',
        )
    return rng.uniform(low, high, size=(int(count), 2))


@dataclass(frozen=True, eq=False)
class KeypointFit:
    """Result of ``fit_keypoints_2d``: parameters, mean residual (px) and accepted steps."""

    params: HandParams
    residual: float
    iterations: int


def _keypoint_system(model, params, target, cam):
    joints, joint_jacobian = posed_joint_jacobian(model, params)
    residual = (project_points(cam, joints) - target).reshape(-1)
    jacobian = np.einsum(
        "nab,nbk->nak", projection_jacobian(cam, joints), joint_jacobian.reshape(NUM_JOINTS, 3, POSE_DOF)
    ).reshape(-1, POSE_DOF)
    return residual, jacobian


def fit_keypoints_2d(
    model: SkinnedHandModel,
    init: HandParams,
    target2d,
    cam: CameraIntrinsics,
    iterations: int = 50,
    damping: float = 1e-2,
    tolerance: float = 1e-6,
) -> KeypointFit:
    """
    Levenberg-Marquardt fit of root pose and articulation to 2D keypoints.

    Shape coefficients stay fixed. Steps that move a joint behind the camera
    are rejected like steps that increase the error.

    Raises:
        BehindCameraError: If ``init`` already puts a joint behind the camera.
    """
    target = KeypointSet2D.coerce(target2d).points
    params = init
    residual, jacobian = _keypoint_system(model, params, target, cam)
    cost = 0.5 * float(residual @ residual)
    accepted = 0
    for _iteration in range(iterations):
        if np.sqrt(2.0 * cost / NUM_JOINTS) < tolerance:
            break
        normal = jacobian.T @ jacobian
        gradient = jacobian.T @ residual
        diagonal = np.diag(normal) + 1e-9 * max(np.max(np.diag(normal)), 1.0)
        improved = False
        while damping < 1e10:
            step = np.linalg.solve(normal + damping * np.diag(diagonal), -gradient)
            trial = apply_pose_update(params, step)
            joints = posed_joints(model, trial)
            if np.all(joints[:, 2] > 0):
                trial_residual = (project_points(cam, joints) - target).reshape(-1)
                trial_cost = 0.5 * float(trial_residual @ trial_residual)
                if trial_cost < cost:
                    improved = True
                    break
            damping *= 4.0
        if not improved:
            break
        params, cost = trial, trial_cost
        damping = max(damping / 3.0, 1e-9)
        residual, jacobian = _keypoint_system(model, params, target, cam)
        accepted += 1
        if np.linalg.norm(step) < STEP_TOLERANCE:
            break
    mean_residual = float(np.mean(np.linalg.norm(residual.reshape(-1, 2), axis=1)))
    return KeypointFit(params=params, residual=mean_residual, iterations=accepted)


@dataclass(frozen=True)
class ScanFailure:
    """One population hand the scan could not process."""

    index: int
    pair_id: str
    error: dict

    def as_dict(self) -> dict:
        return {"index": self.index, "pair_id": self.pair_id, **self.error}


@dataclass(frozen=True)
class ScanResult:
    """Records in population order plus machine-readable failures."""

    mode: str
    records: List[AmbiguityRecord]
    failures: List[ScanFailure] = field(default_factory=list)

    def failure_log(self) -> List[dict]:
        return [failure.as_dict() for failure in self.failures]


def _scan_one(index, hand, model, cam, mode, reference2d, reference3d, shift):
    pair_id = f"{index:05d}"
    try:
        hand3d = posed_joints(model, hand)
        if mode == "raw":
            hand2d = project(cam, hand3d)
        else:
            alignment = pnp_align_with_shift(reference2d, hand3d, cam, shift)
            hand3d = alignment.joints
            hand2d = project(cam, hand3d)
        return ambiguity_distances(pair_id, reference2d, reference3d, hand2d, hand3d), None
    except (NumericalError, ValidationError) as error:
        if isinstance(error, NumericalError):
            payload = error.as_dict()
        else:
            payload = {"error": " ".join(str(m) for m in error.messages), "type": "ValidationError", "module": "alignment"}
        logger.warning(f"Scan ({mode}) skipped hand {pair_id}: {payload['error']}")
        return None, ScanFailure(index, pair_id, payload)


def ambiguity_scan(
    reference: HandParams,
    population: Sequence[HandParams],
    model: SkinnedHandModel,
    cam: CameraIntrinsics,
    mode: str,
    shifts: Optional[np.ndarray] = None,
    seed: int = 0,
    margin: float = 10.0,
    workers: int = 1,
) -> ScanResult:
    """
    Distances between the reference hand and every population hand.

    Modes:
        ``raw``: compare hands as given.
        ``pnp``: first rigidly align each hand to the reference 2D keypoints.
        ``pnp_shift``: align each hand to the reference pattern moved by a
            per-hand shift; shifts are drawn with ``sample_shifts`` from
            ``seed`` when not supplied.

    Per-hand failures are collected and the scan continues. Records keep the
    population order regardless of ``workers``.

    Raises:
        ValidationError: On an unknown mode or an empty population.
        BehindCameraError: If the reference itself cannot be projected.
    """
    if mode not in SCAN_MODES:
        raise ValidationError(
            _('Unknown scan mode %(mode)s; expected one of %(modes)s.') % {'mode': mode, 'modes': ', '.join(SCAN_MODES)},
            code='parameter',
        )
    if not population:
        raise ValidationError(_('The population is empty.'), code='parameter')
    reference3d = KeypointSet3D(posed_joints(model, reference))
    reference2d = project(cam, reference3d)
    count = len(population)
    if mode == "pnp_shift":
        if shifts is None:
            shifts = sample_shifts(reference2d, cam, count, margin, np.random.default_rng(seed))
        shifts = np.asarray(shifts, dtype=np.float64).reshape(count, 2)
    else:
        shifts = np.zeros((count, 2))

    def work(index):
        return _scan_one(index, population[index], model, cam, mode, reference2d, reference3d, shifts[index])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(work, range(count)))
    else:
        outcomes = [work(index) for index in range(count)]

    records = [record for record, _failure in outcomes if record is not None]
    failures = [failure for _record, failure in outcomes if failure is not None]
    logger.info(f"Ambiguity scan ({mode}): {len(records)} records, {len(failures)} failures")
    return ScanResult(mode=mode, records=records, failures=failures)


@dataclass(frozen=True)
class SeparationResult:
    """
    Comparison of the far and near crop-distance buckets.

    Only records with centered 2D error below ``centered_max`` take part.
    """

    near_max: float
    far_max: float
    near_count: int
    far_count: int
    factor: float
    passed: bool

    @property
    def ratio(self) -> float:
        if self.near_max == 0:
            return float("inf") if self.far_max > 0 else 0.0
        return self.far_max / self.near_max

    def as_dict(self) -> dict:
        return {
            "near_max": self.near_max,
            "far_max": self.far_max,
            "near_count": self.near_count,
            "far_count": self.far_count,
            "ratio": None if np.isinf(self.ratio) else self.ratio,
            "factor": self.factor,
            "passed": self.passed,
        }


def separation_check(
    records: Sequence[AmbiguityRecord],
    near: float = 20.0,
    far: float = 100.0,
    centered_max: float = 2.0,
    factor: float = 2.0,
    metric: str = "rootrel_3d_err",
) -> SeparationResult:
    """
    Whether far crops show at least ``factor`` times the 3D error of near crops
    at matched centered 2D error.
    """
    if near > far:
        raise ValidationError(_('The near threshold must not exceed the far threshold.'), code='range')
    matched = [record for record in records if record.centered_2d_err < centered_max]
    near_values = [record.metric(metric) for record in matched if record.crop_px_dist < near]
    far_values = [record.metric(metric) for record in matched if record.crop_px_dist > far]
    near_max = max(near_values, default=0.0)
    far_max = max(far_values, default=0.0)
    passed = bool(far_values) and far_max > 0 and far_max >= factor * near_max
    return SeparationResult(near_max, far_max, len(near_values), len(far_values), factor, passed)


@dataclass(frozen=True, eq=False)
class AmbiguityWitness:
    """
    A shifted placement of the reference pattern that PnP explains almost
    perfectly with a noticeably different 3D hand.

    Attributes:
        baseline: Alignment to the unshifted pattern.
        alignment: Alignment to the selected shifted pattern.
        mpjpe_difference: Root-subtracted 3D difference between the two, mm.
        rootrel_difference: Root-frame 3D difference between the two, mm.
        candidates: ``(shift, residual, mpjpe_difference)`` for every swept shift.
    """

    baseline: ShiftedAlignment
    alignment: ShiftedAlignment
    mpjpe_difference: float
    rootrel_difference: float
    candidates: List[tuple]


def find_ambiguity_witness(
    reference3d,
    cam: CameraIntrinsics,
    corner: Tuple[int, int] = (0, 0),
    steps: int = 8,
    tolerance: float = 0.5,
    margin: float = 10.0,
) -> Optional[AmbiguityWitness]:
    """
    Sweep shifts of the reference pattern toward an image corner.

    ``corner`` is ``(0 or 1, 0 or 1)`` for (left or right, top or bottom).
    Among alignments with residual below ``tolerance`` px, the one with the
    largest root-subtracted 3D difference to the unshifted alignment is
    returned; ``None`` when no shifted alignment meets the tolerance.
    """
    reference3d = KeypointSet3D.coerce(reference3d)
    pattern = project(cam, reference3d).points
    baseline = pnp_align_with_shift(pattern, reference3d, cam, np.zeros(2))
    target = np.array([
        margin - pattern[:, 0].min() if corner[0] == 0 else cam.width - margin - pattern[:, 0].max(),
        margin - pattern[:, 1].min() if corner[1] == 0 else cam.height - margin - pattern[:, 1].max(),
    ])
    best, best_difference, candidates = None, -1.0, []
    for step in range(1, steps + 1):
        shift = target * step / steps
        try:
            alignment = pnp_align_with_shift(pattern, reference3d, cam, shift)
        except NumericalError as error:
            logger.debug(f"Witness sweep skipped shift {shift.tolist()}: {error}")
            continue
        difference = mpjpe(alignment.joints, baseline.joints)
        candidates.append((shift.tolist(), alignment.residual, difference))
        if alignment.residual < tolerance and difference > best_difference:
            best, best_difference = alignment, difference
    if best is None:
        return None
    return AmbiguityWitness(
        baseline=baseline,
        alignment=best,
        mpjpe_difference=best_difference,
        rootrel_difference=root_relative_3d_error(best.joints, baseline.joints),
        candidates=candidates,
    )
