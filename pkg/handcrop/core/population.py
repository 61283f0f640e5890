"""
Synthetic hand populations for the ambiguity analysis.

Two kinds of hands are drawn. Anatomical hands take uniform articulation
within per-joint ranges, a random root rotation, a wrist pixel in the inner
part of the image and a depth in the configured range. Look-alike hands take
the reference 2D keypoint pattern, move it by a random offset whose radius is
uniform, and fit the hand model to the moved pattern, so the population holds
hands with nearly the same crop content at every crop distance.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .alignment import fit_keypoints_2d, pnp_align
from .camera import CameraIntrinsics, lift, project
from .exceptions import NumericalError
from .hand_model import (
    FINGERS,
    NUM_ARTICULATED,
    HandParams,
    SkinnedHandModel,
    compose_root,
    posed_joints,
)
from .rotations import matrix_to_rotvec, random_rotation
from .validators import validate_fraction, validate_interval, validate_positive

logger = logging.getLogger(__name__)

FINGER_FLEXION_AXIS = np.array([1.0, 0.0, 0.0])
THUMB_FLEXION_AXIS = np.array([0.75, 0.55, 0.0]) / np.linalg.norm([0.75, 0.55, 0.0])
ABDUCTION_AXIS = np.array([0.0, 0.0, 1.0])

# Degrees per joint along the chain (base, middle, distal): flexion and abduction.
FINGER_FLEXION = ((-10.0, 90.0), (0.0, 100.0), (0.0, 70.0))
FINGER_ABDUCTION = ((-15.0, 15.0), (0.0, 0.0), (0.0, 0.0))
THUMB_FLEXION = ((-10.0, 40.0), (-10.0, 60.0), (-10.0, 80.0))
THUMB_ABDUCTION = ((-20.0, 20.0), (0.0, 0.0), (0.0, 0.0))

MAX_PLACEMENT_ATTEMPTS = 20
MIN_JOINT_DEPTH = 50.0


def _articulation(flexion: np.ndarray, abduction: np.ndarray) -> np.ndarray:
    """Axis-angle rows from per-joint flexion and abduction angles in radians, (5, 3) each."""
    theta = np.zeros((len(FINGERS), 3, 3))
    for f in range(len(FINGERS)):
        flexion_axis = THUMB_FLEXION_AXIS if f == 0 else FINGER_FLEXION_AXIS
        for k in range(3):
            theta[f, k] = flexion[f, k] * flexion_axis + abduction[f, k] * ABDUCTION_AXIS
    return theta.reshape(NUM_ARTICULATED, 3)


def sample_articulation(rng: np.random.Generator) -> np.ndarray:
    """
    Draw articulation uniformly within anatomical ranges.

    Flexion ranges extend much further toward the palm than away from it.

    Returns:
        np.ndarray: theta of shape (15, 3), radians.
    """
    flexion = np.zeros((len(FINGERS), 3))
    abduction = np.zeros((len(FINGERS), 3))
    for f in range(len(FINGERS)):
        flexion_ranges = THUMB_FLEXION if f == 0 else FINGER_FLEXION
        abduction_ranges = THUMB_ABDUCTION if f == 0 else FINGER_ABDUCTION
        for k in range(3):
            flexion[f, k] = rng.uniform(*flexion_ranges[k])
            abduction[f, k] = rng.uniform(*abduction_ranges[k])
    return _articulation(np.radians(flexion), np.radians(abduction))


def default_reference_params(shape_rank: int = 10, depth: float = 400.0) -> HandParams:
    """Mid-grasp right hand, palm toward the camera, wrist below the optical axis at ``depth`` mm."""
    flexion = np.radians([
        [20.0, 25.0, 20.0],
        [35.0, 45.0, 25.0],
        [40.0, 50.0, 30.0],
        [45.0, 50.0, 30.0],
        [50.0, 45.0, 25.0],
    ])
    abduction = np.radians([[10.0, 0.0, 0.0], [-6.0, 0, 0], [0.0, 0, 0], [5.0, 0, 0], [10.0, 0, 0]])
    return HandParams(
        beta=np.zeros(shape_rank),
        theta=_articulation(flexion, abduction),
        root_rot=np.radians([-20.0, 0.0, 0.0]),
        root_trans=np.array([0.0, 50.0, depth]),
    )


@dataclass(frozen=True, eq=False)
class Population:
    """Sampled hands and the kind of each (``"anatomical"`` or ``"lookalike"``)."""

    hands: List[HandParams]
    kinds: List[str]

    def __len__(self) -> int:
        return len(self.hands)


def _place_anatomical(model, cam, rng, shape_rank, depth_range) -> HandParams:
    for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
        params = HandParams(
            beta=rng.normal(0.0, 0.5, size=shape_rank),
            theta=sample_articulation(rng),
            root_rot=matrix_to_rotvec(random_rotation(rng, max_angle=np.pi / 2)),
            root_trans=np.zeros(3),
        )
        pixel = np.array([rng.uniform(0.1, 0.9) * cam.width, rng.uniform(0.1, 0.9) * cam.height])
        wrist = lift(cam, pixel[None], rng.uniform(*depth_range))[0]
        joints = posed_joints(model, params)
        placed = params.replace(root_trans=wrist - joints[0])
        if np.min(joints[:, 2] - joints[0, 2] + wrist[2]) > MIN_JOINT_DEPTH:
            return placed
    logger.warning(
        f"No anatomical placement kept every joint {MIN_JOINT_DEPTH:g} mm in front of the camera "
        f"after {MAX_PLACEMENT_ATTEMPTS} attempts; keeping the last one (wrist depth {wrist[2]:.1f} mm)"
    )
    return placed


def _fit_lookalike(model, reference, reference3d, target, cam, iterations) -> HandParams:
    try:
        pose, _residual = pnp_align(target, reference3d, cam)
    except NumericalError as error:
        logger.warning(f"Look-alike alignment failed, keeping the reference: {error}")
        return reference
    init = compose_root(reference, pose.rotation, pose.translation)
    try:
        return fit_keypoints_2d(model, init, target, cam, iterations=iterations).params
    except NumericalError as error:
        logger.warning(f"Look-alike refinement failed, keeping the rigid alignment: {error}")
        return init


def sample_population(
    model: SkinnedHandModel,
    reference: HandParams,
    cam: CameraIntrinsics,
    size: int,
    rng: np.random.Generator,
    lookalike_fraction: float = 0.5,
    depth_range: Tuple[float, float] = (250.0, 600.0),
    max_offset: Optional[float] = None,
    iterations: int = 30,
    workers: int = 1,
) -> Population:
    """
    Draw a mixed population of anatomical and look-alike hands.

    All random numbers are drawn up front in a fixed order, so the result
    does not depend on ``workers``. Anatomical hands come first.

    Args:
        model: Hand model.
        reference: Reference hand; look-alikes copy its 2D keypoint pattern.
        cam: Camera intrinsics.
        size: Population size.
        rng: Seeded generator.
        lookalike_fraction: Share of look-alike hands.
        depth_range: Wrist depth interval for anatomical hands, mm.
        max_offset: Largest look-alike offset in px; 40% of the image
            diagonal by default.
        iterations: Keypoint-fit iterations per look-alike.
        workers: Threads used for look-alike fitting.
    """
    size = int(validate_positive(size, "size"))
    lookalike_fraction = validate_fraction(lookalike_fraction, "lookalike_fraction")
    depth_range = validate_interval(depth_range[0], depth_range[1], "depth_range")
    max_offset = validate_positive(0.4 * cam.diagonal if max_offset is None else max_offset, "max_offset")

    lookalikes = int(round(size * lookalike_fraction))
    anatomical = size - lookalikes
    hands = [_place_anatomical(model, cam, rng, reference.beta.size, depth_range) for _ in range(anatomical)]

    reference3d = posed_joints(model, reference)
    pattern = project(cam, reference3d).points
    radii = rng.uniform(0.0, max_offset, size=lookalikes)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=lookalikes)
    offsets = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)

    def work(offset):
        return _fit_lookalike(model, reference, reference3d, pattern + offset, cam, iterations)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hands.extend(pool.map(work, offsets))
    else:
        hands.extend(work(offset) for offset in offsets)

    logger.info(f"Sampled population of {size} hands ({lookalikes} look-alikes)")
    return Population(hands=hands, kinds=["anatomical"] * anatomical + ["lookalike"] * lookalikes)

