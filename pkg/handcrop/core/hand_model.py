"""
Parametric articulated hand.

A MANO-compatible skinning structure: linear shape blending, a kinematic chain
of 15 articulated joints below the wrist, and linear blend skinning. Joints
follow a fixed 21-entry order:

    =====  ===========  =====  ===========  =====  ===========
    index  joint        index  joint        index  joint
    =====  ===========  =====  ===========  =====  ===========
    0      wrist        7      index_dip    14     ring_pip
    1      thumb_cmc    8      index_tip    15     ring_dip
    2      thumb_mcp    9      middle_mcp   16     ring_tip
    3      thumb_ip     10     middle_pip   17     pinky_mcp
    4      thumb_tip    11     middle_dip   18     pinky_pip
    5      index_mcp    12     middle_tip   19     pinky_dip
    6      index_pip    13     ring_mcp     20     pinky_tip
    =====  ===========  =====  ===========  =====  ===========

Rows of ``HandParams.theta`` belong to the 15 joints that are neither the
wrist nor a fingertip, in ascending joint index. Fingertips are mesh vertices
(16 skeleton joints + 5 tip vertices). Units are millimetres and radians.

The licensed MANO asset is not shipped; ``build_procedural_hand`` creates a
low-poly stand-in and ``load_mano_model`` converts externally supplied MANO
data to the same layout.
"""

import functools
import logging
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from .rotations import matrix_to_rotvec, rotvec_to_matrix, skew
from .validators import (
    validate_array,
    validate_face_indices,
    validate_joint_tree,
    validate_positive,
    validate_row_stochastic,
)

logger = logging.getLogger(__name__)

JOINT_NAMES = (
    "wrist",
    "thumb_cmc", "thumb_mcp", "thumb_ip", "thumb_tip",
    "index_mcp", "index_pip", "index_dip", "index_tip",
    "middle_mcp", "middle_pip", "middle_dip", "middle_tip",
    "ring_mcp", "ring_pip", "ring_dip", "ring_tip",
    "pinky_mcp", "pinky_pip", "pinky_dip", "pinky_tip",
)
FINGERS = ("thumb", "index", "middle", "ring", "pinky")
NUM_JOINTS = 21
JOINT_PARENTS = (-1, 0, 1, 2, 3, 0, 5, 6, 7, 0, 9, 10, 11, 0, 13, 14, 15, 0, 17, 18, 19)
TIP_JOINTS = (4, 8, 12, 16, 20)
ARTICULATED_JOINTS = tuple(j for j in range(1, NUM_JOINTS) if j not in TIP_JOINTS)
NUM_ARTICULATED = len(ARTICULATED_JOINTS)
WRIST = 0
INDEX_MCP = 5
MIDDLE_MCP = 9
PINKY_MCP = 17
DEFAULT_SHAPE_RANK = 10
MAX_PROCEDURAL_SHAPE_RANK = 20

# Optimization vector layout used by fitting code: root translation,
# root rotation perturbation, then one perturbation per articulated joint.
POSE_DOF = 6 + 3 * NUM_ARTICULATED


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=array.dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class KeypointSet3D:
    """21 named 3D joints in millimetres, camera frame; joint 0 is the wrist."""

    joints: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "joints", _frozen(validate_array(self.joints, (NUM_JOINTS, 3), "joints")))

    @classmethod
    def coerce(cls, value) -> "KeypointSet3D":
        return value if isinstance(value, cls) else cls(value)

    @property
    def root(self) -> np.ndarray:
        return self.joints[WRIST]


@dataclass(frozen=True, eq=False)
class KeypointSet2D:
    """21 image points in pixels, in the joint order of ``KeypointSet3D``."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(validate_array(self.points, (NUM_JOINTS, 2), "points")))

    @classmethod
    def coerce(cls, value) -> "KeypointSet2D":
        return value if isinstance(value, cls) else cls(value)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def shifted(self, shift) -> "KeypointSet2D":
        return KeypointSet2D(self.points + np.asarray(shift, dtype=np.float64).reshape(1, 2))


@dataclass(frozen=True, eq=False)
class HandParams:
    """
    Shape, articulation and global pose of one hand.

    Attributes:
        beta: Shape coefficients (B,), dimensionless.
        theta: Axis-angle articulation (15, 3), radians.
        root_rot: Axis-angle of the root rotation (3,), radians.
        root_trans: Root translation (3,), millimetres.
    """

    beta: np.ndarray
    theta: np.ndarray
    root_rot: np.ndarray
    root_trans: np.ndarray

    def __post_init__(self):
        beta = validate_array(self.beta, (None,), "beta")
        theta = validate_array(np.asarray(self.theta, dtype=np.float64).reshape(-1), (3 * NUM_ARTICULATED,), "theta")
        object.__setattr__(self, "beta", _frozen(beta))
        object.__setattr__(self, "theta", _frozen(theta.reshape(NUM_ARTICULATED, 3)))
        object.__setattr__(self, "root_rot", _frozen(validate_array(self.root_rot, (3,), "root_rot")))
        object.__setattr__(self, "root_trans", _frozen(validate_array(self.root_trans, (3,), "root_trans")))

    @classmethod
    def zeros(cls, shape_rank: int = DEFAULT_SHAPE_RANK) -> "HandParams":
        """Rest pose at the origin with the mean shape."""
        return cls(np.zeros(shape_rank), np.zeros((NUM_ARTICULATED, 3)), np.zeros(3), np.zeros(3))

    def replace(self, **changes) -> "HandParams":
        values = {
            "beta": self.beta,
            "theta": self.theta,
            "root_rot": self.root_rot,
            "root_trans": self.root_trans,
        }
        values.update(changes)
        return HandParams(**values)

    def as_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "theta": self.theta.tolist(),
            "root_rot": self.root_rot.tolist(),
            "root_trans": self.root_trans.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HandParams":
        missing = {"beta", "theta", "root_rot", "root_trans"} - set(data)
        if missing:
            raise ValidationError(
                _('Hand parameters are missing %(fields)s.') % {'fields': ', '.join(sorted(missing))},
                code='parameter',
            )
        return cls(data["beta"], data["theta"], data["root_rot"], data["root_trans"])


@dataclass(frozen=True, eq=False)
class SkinnedHandModel:
    """
    Skinning structure of a hand mesh.

    Attributes:
        template_vertices: Rest vertices (V, 3), mm.
        faces: Vertex-index triples (F, 3).
        joint_parents: Parent index per joint (21,), -1 for the wrist.
        rest_joints: Rest joints (21, 3), mm, regressed from the template.
        skinning_weights: (V, 21) row-stochastic.
        shape_basis: (V, 3, B) displacement directions.
        joint_regressor: (21, V) row-stochastic vertex weights per joint.
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    joint_parents: np.ndarray
    rest_joints: np.ndarray
    skinning_weights: np.ndarray
    shape_basis: np.ndarray
    joint_regressor: np.ndarray
    descendants: Tuple[Tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        vertices = validate_array(self.template_vertices, (None, 3), "template_vertices")
        count = len(vertices)
        parents = validate_joint_tree(self.joint_parents)
        if len(parents) != NUM_JOINTS:
            raise ValidationError(
                _('A hand model needs %(n)s joints, got %(got)s.') % {'n': NUM_JOINTS, 'got': len(parents)},
                code='dimension',
            )
        if any(parents[j] >= j for j in range(1, NUM_JOINTS)):
            raise ValidationError(_('Joints must be ordered parents first.'), code='parameter')
        faces = validate_face_indices(self.faces, count)
        weights = validate_row_stochastic(
            validate_array(self.skinning_weights, (count, NUM_JOINTS), "skinning_weights"), "skinning_weights"
        )
        regressor = validate_row_stochastic(
            validate_array(self.joint_regressor, (NUM_JOINTS, count), "joint_regressor"), "joint_regressor"
        )
        basis = validate_array(self.shape_basis, (count, 3, None), "shape_basis")
        rest = validate_array(self.rest_joints, (NUM_JOINTS, 3), "rest_joints")

        object.__setattr__(self, "template_vertices", _frozen(vertices))
        object.__setattr__(self, "faces", _frozen(faces))
        object.__setattr__(self, "joint_parents", _frozen(parents))
        object.__setattr__(self, "skinning_weights", _frozen(weights))
        object.__setattr__(self, "joint_regressor", _frozen(regressor))
        object.__setattr__(self, "shape_basis", _frozen(basis))
        object.__setattr__(self, "rest_joints", _frozen(rest))

        descendants = [[] for _ in range(NUM_JOINTS)]
        for joint in range(NUM_JOINTS - 1, 0, -1):
            parent = int(parents[joint])
            descendants[parent].extend([joint] + descendants[joint])
        object.__setattr__(self, "descendants", tuple(tuple(sorted(d)) for d in descendants))

    @property
    def shape_rank(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def vertex_count(self) -> int:
        return self.template_vertices.shape[0]

    def as_dict(self) -> dict:
        return {
            "template_vertices": self.template_vertices.tolist(),
            "faces": self.faces.tolist(),
            "joint_parents": self.joint_parents.tolist(),
            "rest_joints": self.rest_joints.tolist(),
            "skinning_weights": self.skinning_weights.tolist(),
            "shape_basis": self.shape_basis.tolist(),
            "joint_regressor": self.joint_regressor.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SkinnedHandModel":
        fields = (
            "template_vertices", "faces", "joint_parents", "rest_joints",
            "skinning_weights", "shape_basis", "joint_regressor",
        )
        missing = [name for name in fields if name not in data]
        if missing:
            raise ValidationError(
                _('Model file is missing %(fields)s.') % {'fields': ', '.join(missing)},
                code='parameter',
            )
        return cls(**{name: data[name] for name in fields})


@dataclass(frozen=True, eq=False)
class ShapedHand:
    vertices: np.ndarray
    joints: np.ndarray


@dataclass(frozen=True, eq=False)
class PosedHand:
    """
    Result of forward kinematics.

    Attributes:
        joints: Posed joints (21, 3), mm.
        vertices: Skinned vertices (V, 3), mm.
        rotations: World rotation of every joint (21, 3, 3), root included.
        rest_vertices: Shaped rest vertices the pose was applied to.
        rest_joints: Shaped rest joints the pose was applied to.
        root_trans: Root translation of the pose.
    """

    joints: np.ndarray
    vertices: np.ndarray
    rotations: np.ndarray
    rest_vertices: np.ndarray
    rest_joints: np.ndarray
    root_trans: np.ndarray

    @property
    def keypoints(self) -> KeypointSet3D:
        return KeypointSet3D(self.joints)


def shape_hand(model: SkinnedHandModel, beta) -> ShapedHand:
    """
    Blend the template with shape coefficients.

    Args:
        model: The hand model.
        beta: Shape coefficients, length ``model.shape_rank``.

    Returns:
        ShapedHand: Shaped vertices and the joints regressed from them.

    Raises:
        ValidationError: If ``beta`` does not match the basis rank.
    """
    beta = validate_array(beta, (model.shape_rank,), "beta")
    vertices = model.template_vertices + np.tensordot(model.shape_basis, beta, axes=([2], [0]))
    joints = model.joint_regressor @ vertices
    return ShapedHand(vertices=vertices, joints=joints)


def _local_rotations(theta: np.ndarray) -> np.ndarray:
    local = np.broadcast_to(np.eye(3), (NUM_JOINTS, 3, 3)).copy()
    local[list(ARTICULATED_JOINTS)] = rotvec_to_matrix(theta)
    return local


def _chain(model: SkinnedHandModel, params: HandParams, rest_joints: np.ndarray):
    """Compose world rotations and posed joint positions down the tree."""
    local = _local_rotations(params.theta)
    root = rotvec_to_matrix(params.root_rot)
    parents = model.joint_parents
    rotations = np.empty((NUM_JOINTS, 3, 3))
    positions = np.empty((NUM_JOINTS, 3))
    # The root rotation acts about the model origin: x -> R x + t.
    rotations[0] = root
    positions[0] = root @ rest_joints[0]
    for joint in range(1, NUM_JOINTS):
        parent = parents[joint]
        rotations[joint] = rotations[parent] @ local[joint]
        positions[joint] = rotations[parent] @ (rest_joints[joint] - rest_joints[parent]) + positions[parent]
    return rotations, positions + params.root_trans


def forward_kinematics(model: SkinnedHandModel, params: HandParams) -> PosedHand:
    """
    Pose the hand: shape blending, transform chain and linear blend skinning.

    Args:
        model: The hand model.
        params: Shape, articulation and root pose.

    Returns:
        PosedHand: Posed joints, skinned vertices and per-joint world rotations.
    """
    shaped = shape_hand(model, params.beta)
    rotations, joints = _chain(model, params, shaped.joints)
    # Relative transform of joint j maps rest x to R_j (x - J_j) + p_j.
    offsets = joints - np.einsum("jab,jb->ja", rotations, shaped.joints)
    weights = model.skinning_weights
    blended = np.einsum("vj,jab->vab", weights, rotations)
    vertices = np.einsum("vab,vb->va", blended, shaped.vertices) + weights @ offsets
    return PosedHand(
        joints=joints,
        vertices=vertices,
        rotations=rotations,
        rest_vertices=shaped.vertices,
        rest_joints=shaped.joints,
        root_trans=np.array(params.root_trans),
    )


def posed_joints(model: SkinnedHandModel, params: HandParams) -> np.ndarray:
    """Posed joints only, skipping skinning."""
    shaped_joints = shape_hand(model, params.beta).joints
    return _chain(model, params, shaped_joints)[1]


def posed_joint_jacobian(model: SkinnedHandModel, params: HandParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    Jacobian of the posed joints with respect to a pose perturbation.

    The perturbation vector has ``POSE_DOF`` entries: root translation (mm),
    a left rotation increment of the root (rad, camera frame) and one left
    increment per articulated joint expressed in its parent's frame, i.e.
    ``R_j <- exp(delta_j) R_j``. Apply a step with ``apply_pose_update``.

    Returns:
        tuple: ``(joints (21, 3), jacobian (63, POSE_DOF))``.
    """
    shaped_joints = shape_hand(model, params.beta).joints
    rotations, joints = _chain(model, params, shaped_joints)
    jacobian = np.zeros((NUM_JOINTS, 3, POSE_DOF))
    jacobian[:, :, 0:3] = np.eye(3)
    jacobian[:, :, 3:6] = -skew(joints - params.root_trans)
    parents = model.joint_parents
    for slot, joint in enumerate(ARTICULATED_JOINTS):
        below = list(model.descendants[joint])
        if not below:
            continue
        frame = rotations[parents[joint]]
        jacobian[below, :, 6 + 3 * slot:9 + 3 * slot] = -skew(joints[below] - joints[joint]) @ frame
    return joints, jacobian.reshape(3 * NUM_JOINTS, POSE_DOF)


def apply_pose_update(params: HandParams, delta) -> HandParams:
    """Apply a ``POSE_DOF`` perturbation (see ``posed_joint_jacobian``)."""
    delta = np.asarray(delta, dtype=np.float64)
    root_rot = matrix_to_rotvec(rotvec_to_matrix(delta[3:6]) @ rotvec_to_matrix(params.root_rot))
    theta = matrix_to_rotvec(
        rotvec_to_matrix(delta[6:].reshape(NUM_ARTICULATED, 3)) @ rotvec_to_matrix(params.theta)
    )
    return params.replace(root_trans=params.root_trans + delta[0:3], root_rot=root_rot, theta=theta)


def compose_root(params: HandParams, rotation, translation) -> HandParams:
    """Apply an extra rigid motion ``x -> R x + t`` on top of the root pose."""
    rotation = np.asarray(rotation, dtype=np.float64)
    root = rotation @ rotvec_to_matrix(params.root_rot)
    return params.replace(
        root_rot=matrix_to_rotvec(root),
        root_trans=rotation @ params.root_trans + np.asarray(translation, dtype=np.float64),
    )


def mirror_hand_params(params: HandParams) -> HandParams:
    """
    Mirror a hand across the x = 0 plane (left/right sign flip).

    Axis-angle vectors are axial, so the reflection keeps x and negates y and z;
    the translation negates x.
    """
    flip_axis = np.array([1.0, -1.0, -1.0])
    return params.replace(
        theta=params.theta * flip_axis,
        root_rot=params.root_rot * flip_axis,
        root_trans=params.root_trans * np.array([-1.0, 1.0, 1.0]),
    )


# ---------------------------------------------------------------------------
# Procedural hand
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FingerSpec:
    """Base joint, pointing direction, three segment lengths (mm) and radius (mm)."""

    name: str
    base: Tuple[float, float, float]
    direction: Tuple[float, float, float]
    lengths: Tuple[float, float, float]
    radius: float


@dataclass(frozen=True)
class HandSpec:
    """
    Dimensions of the procedural hand.

    The wrist sits at the origin, fingers point along -y and the palm faces
    -z (toward a camera looking down +z when the root rotation is zero).
    """

    fingers: Tuple[FingerSpec, ...] = (
        FingerSpec("thumb", (24.0, -18.0, -8.0), (0.55, -0.75, -0.35), (38.0, 32.0, 27.0), 10.0),
        FingerSpec("index", (24.0, -88.0, 0.0), (0.0, -1.0, 0.0), (44.0, 26.0, 22.0), 9.0),
        FingerSpec("middle", (7.0, -92.0, 0.0), (0.0, -1.0, 0.0), (48.0, 30.0, 24.0), 9.2),
        FingerSpec("ring", (-10.0, -88.0, 0.0), (0.0, -1.0, 0.0), (45.0, 28.0, 23.0), 8.6),
        FingerSpec("pinky", (-26.0, -80.0, 0.0), (-0.08, -1.0, 0.0), (34.0, 20.0, 20.0), 7.6),
    )
    taper: Tuple[float, float, float] = (1.0, 0.88, 0.76)
    palm_min: Tuple[float, float, float] = (-34.0, -90.0, -12.0)
    palm_max: Tuple[float, float, float] = (34.0, 6.0, 12.0)
    sides: int = 6
    proximal_blend: float = 0.25
    shape_rank: int = DEFAULT_SHAPE_RANK
    shape_scale: float = 3.0
    seed: int = 0


def _ring_frame(direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.eye(3)[int(np.argmin(np.abs(direction)))]
    first = np.cross(direction, helper)
    first /= np.linalg.norm(first)
    return first, np.cross(direction, first)


def _capsule(start, end, radius, sides, far_apex=None):
    """
    Closed low-poly capsule: two rings and a pointed cap at each end.

    Vertex order is ring at ``start``, ring at ``end``, near apex, far apex.
    """
    axis = end - start
    direction = axis / np.linalg.norm(axis)
    first, second = _ring_frame(direction)
    angles = 2.0 * np.pi * np.arange(sides) / sides
    circle = np.cos(angles)[:, None] * first + np.sin(angles)[:, None] * second
    near_apex = start - radius * direction
    if far_apex is None:
        far_apex = end + radius * direction
    vertices = np.vstack([start + radius * circle, end + radius * circle, near_apex, far_apex])
    faces = []
    for k in range(sides):
        nxt = (k + 1) % sides
        faces.append((k, nxt, sides + nxt))
        faces.append((k, sides + nxt, sides + k))
        faces.append((2 * sides, nxt, k))
        faces.append((2 * sides + 1, sides + k, sides + nxt))
    return vertices, np.asarray(faces, dtype=np.int64)


def _box(low, high):
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    corners = np.array([
        [low[0], low[1], low[2]], [high[0], low[1], low[2]],
        [high[0], high[1], low[2]], [low[0], high[1], low[2]],
        [low[0], low[1], high[2]], [high[0], low[1], high[2]],
        [high[0], high[1], high[2]], [low[0], high[1], high[2]],
    ])
    faces = np.array([
        (0, 2, 1), (0, 3, 2), (4, 5, 6), (4, 6, 7),
        (0, 1, 5), (0, 5, 4), (2, 3, 7), (2, 7, 6),
        (1, 2, 6), (1, 6, 5), (0, 4, 7), (0, 7, 3),
    ], dtype=np.int64)
    return corners, faces


def _validate_spec(spec: HandSpec) -> None:
    if len(spec.fingers) != len(FINGERS):
        raise ValidationError(_('A hand spec needs exactly five fingers.'), code='parameter')
    for finger in spec.fingers:
        for length in finger.lengths:
            validate_positive(length, f"{finger.name} segment length")
        validate_positive(finger.radius, f"{finger.name} radius")
        if np.linalg.norm(finger.direction) == 0:
            raise ValidationError(
                _('%(name)s direction must be non-zero.') % {'name': finger.name},
                code='parameter',
            )
    for factor in spec.taper:
        validate_positive(factor, "taper")
    for low, high in zip(spec.palm_min, spec.palm_max):
        validate_positive(high - low, "palm extent")
    if not spec.palm_min[1] < 0.0 < spec.palm_max[1]:
        raise ValidationError(_('The palm box must contain the wrist.'), code='parameter')
    if spec.sides < 3:
        raise ValidationError(_('Capsules need at least 3 sides.'), code='parameter')
    if not 1 <= spec.shape_rank <= MAX_PROCEDURAL_SHAPE_RANK:
        raise ValidationError(
            _('Procedural shape rank must lie in 1..%(max)s.') % {'max': MAX_PROCEDURAL_SHAPE_RANK},
            code='range',
        )
    if not 0.0 <= spec.proximal_blend < 1.0:
        raise ValidationError(_('proximal_blend must lie in [0, 1).'), code='range')


def _shape_fields(vertices: np.ndarray) -> np.ndarray:
    """Smooth displacement fields: every linear and quadratic monomial per axis, (3V, 27)."""
    p = vertices / 100.0
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    monomials = np.stack([x, y, z, x * x, y * y, z * z, x * y, y * z, x * z], axis=1)
    columns = []
    for m in range(monomials.shape[1]):
        for axis in range(3):
            field_ = np.zeros_like(vertices)
            field_[:, axis] = monomials[:, m]
            columns.append(field_.reshape(-1))
    return np.stack(columns, axis=1)


def build_procedural_hand(spec: Optional[HandSpec] = None) -> SkinnedHandModel:
    """
    Build the low-poly stand-in hand: a capsule per phalanx and a box palm.

    Skinning is rigid-dominant: each capsule follows the joint at its proximal
    end, with its proximal ring blended toward the parent joint. Joints are
    regressed as ring centres (fingertips as the far apex vertex; the wrist as
    a weighted average of palm corners). The shape basis consists of smooth
    polynomial displacement fields, orthonormalized with a fixed seed and
    anchored so the wrist never moves.

    Raises:
        ValidationError: If any dimension is non-positive.
    """
    spec = spec or HandSpec()
    _validate_spec(spec)
    rng = np.random.default_rng(spec.seed)

    rest_joints = np.zeros((NUM_JOINTS, 3))
    for f, finger in enumerate(spec.fingers):
        direction = np.asarray(finger.direction, dtype=np.float64)
        direction /= np.linalg.norm(direction)
        first = 1 + 4 * f
        rest_joints[first] = finger.base
        for k, length in enumerate(finger.lengths):
            rest_joints[first + k + 1] = rest_joints[first + k] + length * direction

    vertex_blocks, face_blocks, weight_rows = [], [], []
    regressor_parts = {}
    offset = 0

    palm_vertices, palm_faces = _box(spec.palm_min, spec.palm_max)
    vertex_blocks.append(palm_vertices)
    face_blocks.append(palm_faces)
    for _corner in range(len(palm_vertices)):
        row = np.zeros(NUM_JOINTS)
        row[WRIST] = 1.0
        weight_rows.append(row)
    # Weight the wrist-side and finger-side corners so their average is the origin.
    y_low, y_high = spec.palm_min[1], spec.palm_max[1]
    high_share = -y_low / (y_high - y_low)
    corner_weights = np.where(palm_vertices[:, 1] == y_high, high_share / 4.0, (1.0 - high_share) / 4.0)
    regressor_parts[WRIST] = (np.arange(len(palm_vertices)), corner_weights)
    offset += len(palm_vertices)

    sides = spec.sides
    for f, finger in enumerate(spec.fingers):
        first = 1 + 4 * f
        for k in range(3):
            joint = first + k
            start, end = rest_joints[joint], rest_joints[joint + 1]
            radius = finger.radius * spec.taper[k]
            far_apex = None
            if k == 2:
                direction = (end - start) / np.linalg.norm(end - start)
                far_apex = end
                end = end - radius * direction
            vertices, faces = _capsule(start, end, radius, sides, far_apex)
            vertex_blocks.append(vertices)
            face_blocks.append(faces + offset)
            parent = JOINT_PARENTS[joint]
            for index in range(len(vertices)):
                row = np.zeros(NUM_JOINTS)
                proximal = index < sides or index == 2 * sides
                if proximal and spec.proximal_blend > 0:
                    row[joint] = 1.0 - spec.proximal_blend
                    row[parent] = spec.proximal_blend
                else:
                    row[joint] = 1.0
                weight_rows.append(row)
            ring = offset + np.arange(sides)
            regressor_parts[joint] = (ring, np.full(sides, 1.0 / sides))
            if k == 2:
                regressor_parts[joint + 1] = (np.array([offset + 2 * sides + 1]), np.array([1.0]))
            offset += len(vertices)

    template = np.vstack(vertex_blocks)
    faces = np.vstack(face_blocks)
    weights = np.vstack(weight_rows)
    regressor = np.zeros((NUM_JOINTS, len(template)))
    for joint, (indices, values) in regressor_parts.items():
        regressor[joint, indices] = values

    fields_ = _shape_fields(template) @ rng.normal(size=(27, spec.shape_rank))
    displacement = fields_.reshape(len(template), 3, spec.shape_rank)
    displacement -= np.einsum("v,vab->ab", regressor[WRIST], displacement)[None]
    q, r = np.linalg.qr(displacement.reshape(-1, spec.shape_rank))
    q *= np.where(np.diag(r) < 0, -1.0, 1.0)
    basis = (q * spec.shape_scale * np.sqrt(len(template))).reshape(len(template), 3, spec.shape_rank)

    logger.debug(
        f"Built procedural hand: {len(template)} vertices, {len(faces)} faces, shape rank {spec.shape_rank}"
    )
    return SkinnedHandModel(
        template_vertices=template,
        faces=faces,
        joint_parents=np.asarray(JOINT_PARENTS),
        rest_joints=regressor @ template,
        skinning_weights=weights,
        shape_basis=basis,
        joint_regressor=regressor,
    )


# ---------------------------------------------------------------------------
# External MANO data
# ---------------------------------------------------------------------------

# MANO joints: wrist, index 1-3, middle 4-6, pinky 7-9, ring 10-12, thumb 13-15.
MANO_TO_HANDCROP = {
    0: 0,
    13: 1, 14: 2, 15: 3,
    1: 5, 2: 6, 3: 7,
    4: 9, 5: 10, 6: 11,
    10: 13, 11: 14, 12: 15,
    7: 17, 8: 18, 9: 19,
}
# Fingertip vertices of the MANO mesh, thumb to pinky.
MANO_TIP_VERTICES = (745, 317, 444, 556, 673)


def load_mano_model(path, units_per_metre: float = 1000.0) -> SkinnedHandModel:
    """
    Read externally supplied MANO skinning data.

    Accepts an ``.npz`` archive or a pickle of plain arrays with the keys
    ``v_template``, ``f``, ``J_regressor``, ``weights``, ``shapedirs`` and
    ``kintree_table``. Joints are reordered to the handcrop order, fingertip
    vertices are appended as joints and lengths are converted to millimetres.
    Pose-dependent blend shapes are ignored.

    Raises:
        ValidationError: If a key is missing or arrays are inconsistent.
    """
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as archive:
            data = {key: archive[key] for key in archive.files}
    else:
        with path.open("rb") as handle:
            data = pickle.load(handle, encoding="latin1")
    required = ("v_template", "f", "J_regressor", "weights", "shapedirs", "kintree_table")
    missing = [key for key in required if key not in data]
    if missing:
        raise ValidationError(
            _('MANO data is missing %(keys)s.') % {'keys': ', '.join(missing)},
            code='parameter',
        )

    def dense(value):
        return np.asarray(value.toarray() if hasattr(value, "toarray") else value, dtype=np.float64)

    template = dense(data["v_template"]) * units_per_metre
    mano_regressor = dense(data["J_regressor"])
    mano_weights = dense(data["weights"])
    if mano_regressor.shape[0] != 16 or mano_weights.shape[1] != 16:
        raise ValidationError(_('MANO data must describe 16 joints.'), code='dimension')

    regressor = np.zeros((NUM_JOINTS, len(template)))
    weights = np.zeros((len(template), NUM_JOINTS))
    for mano_joint, joint in MANO_TO_HANDCROP.items():
        regressor[joint] = mano_regressor[mano_joint]
        weights[:, joint] = mano_weights[:, mano_joint]
    for tip, vertex in zip(TIP_JOINTS, MANO_TIP_VERTICES):
        regressor[tip, vertex] = 1.0

    logger.info(f"Loaded MANO model from {path.name}: {len(template)} vertices")
    return SkinnedHandModel(
        template_vertices=template,
        faces=np.asarray(data["f"], dtype=np.int64),
        joint_parents=np.asarray(JOINT_PARENTS),
        rest_joints=regressor @ template,
        skinning_weights=weights,
        shape_basis=dense(data["shapedirs"]) * units_per_metre,
        joint_regressor=regressor,
    )


@functools.lru_cache(maxsize=1)
def default_hand_model() -> SkinnedHandModel:
    """The procedural hand built from the default ``HandSpec``, built once per process."""
    return build_procedural_hand(HandSpec())
