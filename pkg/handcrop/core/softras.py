"""
Soft silhouette rasterization, the L1 mask loss and silhouette fitting.

For pixel centre ``p`` and triangle ``j`` the signed distance ``d`` (positive
inside) gives a coverage ``D = logistic(d |d| / sigma)``; a pixel's occupancy
is ``1 - prod_j (1 - D)``, taken over the triangles whose screen bounding box,
grown by ``cutoff * sqrt(sigma)`` px, contains the pixel centre. Products are
accumulated as sums of ``log(1 - D)`` in a fixed pair order, so renders are
bit-reproducible. There is no depth test: silhouettes ignore occlusion.

Gradients are analytic and flow occupancy -> coverage -> signed distance ->
projected vertex -> 3D vertex -> hand parameters.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _
from scipy.special import expit, log_expit

from .camera import CameraIntrinsics, project_points, projection_jacobian
from .exceptions import BehindCameraError, FitError, RenderError
from .hand_model import (
    ARTICULATED_JOINTS,
    POSE_DOF,
    HandParams,
    SkinnedHandModel,
    apply_pose_update,
    forward_kinematics,
)
from .validators import validate_array, validate_face_indices, validate_positive

logger = logging.getLogger(__name__)

DEFAULT_SIGMA_FACTOR = 1e-4
DEFAULT_CUTOFF = 3.0
PARAMETER_BLOCKS = ("root_trans", "root_rot", "theta")
TRANSLATION_SCALE = 100.0
ARMIJO = 1e-4
MIN_STEP = 1e-10


def default_sigma(width: int, height: int, factor: float = DEFAULT_SIGMA_FACTOR) -> float:
    """Sharpness as a fraction of the squared image diagonal, px^2."""
    return factor * float(width * width + height * height)


def render_camera(cam: CameraIntrinsics, size: Optional[int]) -> CameraIntrinsics:
    """Intrinsics rescaled so the render is ``size`` px wide; unchanged when ``size`` is None."""
    if size is None or int(size) == cam.width:
        return cam
    return cam.scaled(int(size) / cam.width)


@dataclass(frozen=True, eq=False)
class SoftSilhouette:
    """Occupancy probabilities (height, width) rendered with sharpness ``sigma`` (px^2)."""

    occupancy: np.ndarray
    sigma: float

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]


@dataclass(frozen=True, eq=False)
class MaskImage:
    """
    Target mask with values in [0, 1].

    Masks read from files are binary; masks made from renders may be soft.
    ``amodal`` marks a mask of the full hand extent.
    """

    values: np.ndarray
    amodal: bool = True

    def __post_init__(self):
        values = validate_array(self.values, (None, None), "mask")
        if values.size == 0 or values.min() < 0.0 or values.max() > 1.0:
            raise ValidationError(_('Mask values must lie in [0, 1].'), code='range')
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "amodal", bool(self.amodal))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_silhouette(cls, silhouette: SoftSilhouette, amodal: bool = True, threshold: Optional[float] = None):
        """Mask from a render, kept soft or binarized at ``threshold``."""
        values = silhouette.occupancy
        if threshold is not None:
            values = (values >= threshold).astype(np.float64)
        return cls(values, amodal)


@dataclass(frozen=True, eq=False)
class _Pairs:
    """Pixel/face pairs inside the cutoff band, with the closest-edge geometry of each."""

    pixel: np.ndarray
    face: np.ndarray
    signed: np.ndarray
    start: np.ndarray
    end: np.ndarray
    along: np.ndarray
    normal: np.ndarray


def _project(vertices: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    try:
        return project_points(cam, vertices)
    except BehindCameraError as error:
        raise RenderError(f"Vertex {error.index} is behind the camera (Z = {error.depth:.6g} mm).") from error


def _pairs(projected: np.ndarray, faces: np.ndarray, width: int, height: int, band: float) -> _Pairs:
    triangles = projected[faces]
    low = triangles.min(axis=1) - band
    high = triangles.max(axis=1) + band
    col0 = np.clip(np.ceil(low[:, 0] - 0.5), 0, width).astype(np.int64)
    col1 = np.clip(np.floor(high[:, 0] - 0.5), -1, width - 1).astype(np.int64)
    row0 = np.clip(np.ceil(low[:, 1] - 0.5), 0, height).astype(np.int64)
    row1 = np.clip(np.floor(high[:, 1] - 0.5), -1, height - 1).astype(np.int64)
    cols = np.maximum(col1 - col0 + 1, 0)
    rows = np.maximum(row1 - row0 + 1, 0)
    counts = cols * rows
    total = int(counts.sum())

    face = np.repeat(np.arange(len(faces)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    span = np.maximum(cols, 1)[face]
    col = col0[face] + local % span
    row = row0[face] + local // span
    pixel = row * width + col
    point = np.stack([col + 0.5, row + 0.5], axis=1)

    tri = triangles[face]
    best = np.full(total, np.inf)
    start = np.zeros(total, dtype=np.int64)
    end = np.zeros(total, dtype=np.int64)
    along = np.zeros(total)
    closest = np.zeros((total, 2))
    inside = np.ones(total, dtype=bool)
    area = ((tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1])
            - (tri[:, 1, 1] - tri[:, 0, 1]) * (tri[:, 2, 0] - tri[:, 0, 0]))
    for k in range(3):
        a, b = tri[:, k], tri[:, (k + 1) % 3]
        edge = b - a
        length2 = np.einsum("ij,ij->i", edge, edge)
        t = np.clip(np.einsum("ij,ij->i", point - a, edge) / np.where(length2 > 0, length2, 1.0), 0.0, 1.0)
        foot = a + t[:, None] * edge
        distance = np.linalg.norm(point - foot, axis=1)
        better = distance < best
        best = np.where(better, distance, best)
        start = np.where(better, faces[face, k], start)
        end = np.where(better, faces[face, (k + 1) % 3], end)
        along = np.where(better, t, along)
        closest = np.where(better[:, None], foot, closest)
        side = edge[:, 0] * (point[:, 1] - a[:, 1]) - edge[:, 1] * (point[:, 0] - a[:, 0])
        inside &= side * area > 0
    inside &= area != 0
    sign = np.where(inside, 1.0, -1.0)
    offset = point - closest
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(best[:, None] > 0, offset / best[:, None], 0.0)
    return _Pairs(
        pixel=pixel,
        face=face,
        signed=sign * best,
        start=start,
        end=end,
        along=along,
        normal=sign[:, None] * unit,
    )


def _rasterize(vertices, faces, cam, sigma, cutoff):
    sigma = validate_positive(sigma, "sigma")
    cutoff = validate_positive(cutoff, "cutoff")
    vertices = validate_array(vertices, (None, 3), "vertices")
    faces = validate_face_indices(faces, len(vertices))
    projected = _project(vertices, cam)
    pairs = _pairs(projected, faces, cam.width, cam.height, cutoff * np.sqrt(sigma))
    scaled = pairs.signed * np.abs(pairs.signed) / sigma
    log_miss = log_expit(-scaled)
    total = np.bincount(pairs.pixel, weights=log_miss, minlength=cam.width * cam.height)
    occupancy = -np.expm1(total).reshape(cam.height, cam.width)
    return SoftSilhouette(occupancy=np.clip(occupancy, 0.0, 1.0), sigma=sigma), pairs, scaled, log_miss, total, projected


def render_soft_silhouette(
    vertices,
    faces,
    cam: CameraIntrinsics,
    size: Optional[int] = None,
    sigma: Optional[float] = None,
    cutoff: float = DEFAULT_CUTOFF,
) -> SoftSilhouette:
    """
    Render the soft silhouette of a mesh.

    Args:
        vertices: Camera-frame vertices (V, 3), mm.
        faces: Triangles (F, 3).
        cam: Camera intrinsics.
        size: Render width in px; the camera is rescaled to it. Defaults to
            the camera's own width.
        sigma: Sharpness in px^2; ``1e-4`` of the squared render diagonal
            by default.
        cutoff: Band around each triangle's bounding box, in units of
            ``sqrt(sigma)``.

    Raises:
        RenderError: If a vertex is behind the camera.
        ValidationError: If ``sigma`` or ``cutoff`` is not positive.
    """
    cam = render_camera(cam, size)
    sigma = default_sigma(cam.width, cam.height) if sigma is None else sigma
    return _rasterize(vertices, faces, cam, sigma, cutoff)[0]


def silhouette_l1_loss(render: SoftSilhouette, target: MaskImage):
    """
    Mean absolute difference between a render and an amodal target mask.

    Returns:
        tuple: ``(loss, gradient)``; the gradient is ``sign(render - target) / N``
        with the render's shape.

    Raises:
        ValidationError: ``modal_mask`` for a modal target, ``dimension`` on a
            size mismatch.
    """
    if not target.amodal:
        raise ValidationError(_('The silhouette loss only applies to amodal masks.'), code='modal_mask')
    if render.occupancy.shape != target.values.shape:
        raise ValidationError(
            _('Render %(render)s and mask %(mask)s differ in size.') % {
                'render': render.occupancy.shape, 'mask': target.values.shape,
            },
            code='dimension',
        )
    difference = render.occupancy - target.values
    count = difference.size
    return float(np.abs(difference).sum() / count), np.sign(difference) / count


def silhouette_loss_grad_vertices(
    vertices,
    faces,
    cam: CameraIntrinsics,
    target: MaskImage,
    size: Optional[int] = None,
    sigma: Optional[float] = None,
    cutoff: float = DEFAULT_CUTOFF,
):
    """
    L1 silhouette loss and its analytic gradient with respect to the vertices.

    Returns:
        tuple: ``(loss, gradient (V, 3), SoftSilhouette)``.
    """
    cam = render_camera(cam, size)
    sigma = default_sigma(cam.width, cam.height) if sigma is None else sigma
    render, pairs, scaled, log_miss, total, projected = _rasterize(vertices, faces, cam, sigma, cutoff)
    loss, grad_occupancy = silhouette_l1_loss(render, target)
    vertices = np.asarray(vertices, dtype=np.float64)

    coverage = expit(scaled)
    # d occupancy / d coverage is the product of the other faces' misses.
    others = np.exp(total[pairs.pixel] - log_miss)
    chain = (
        grad_occupancy.reshape(-1)[pairs.pixel]
        * others
        * coverage * expit(-scaled)
        * 2.0 * np.abs(pairs.signed) / render.sigma
    )
    start_weight = (chain * -(1.0 - pairs.along))[:, None] * pairs.normal
    end_weight = (chain * -pairs.along)[:, None] * pairs.normal
    count = len(vertices)
    grad2d = np.zeros((count, 2))
    for axis in range(2):
        grad2d[:, axis] = (
            np.bincount(pairs.start, weights=start_weight[:, axis], minlength=count)
            + np.bincount(pairs.end, weights=end_weight[:, axis], minlength=count)
        )
    gradient = np.einsum("nab,na->nb", projection_jacobian(cam, vertices), grad2d)
    return loss, gradient, render


def pose_gradient(model: SkinnedHandModel, posed, vertex_gradient: np.ndarray) -> np.ndarray:
    """
    Pull a vertex gradient back to the ``POSE_DOF`` perturbation vector.

    Uses the same perturbation convention as ``posed_joint_jacobian``.
    """
    rotations = posed.rotations
    joints = posed.joints
    weights = model.skinning_weights
    # Each joint's rigid copy of every vertex, weighted by skinning.
    copies = (
        np.einsum("jab,vb->vja", rotations, posed.rest_vertices)
        - np.einsum("jab,jb->ja", rotations, posed.rest_joints)[None]
        + joints[None]
    )
    weighted = weights[:, :, None] * copies

    gradient = np.zeros(POSE_DOF)
    gradient[0:3] = vertex_gradient.sum(axis=0)
    gradient[3:6] = np.cross(posed.vertices - posed.root_trans, vertex_gradient).sum(axis=0)
    parents = model.joint_parents
    for slot, joint in enumerate(ARTICULATED_JOINTS):
        subtree = [joint, *model.descendants[joint]]
        moved = weighted[:, subtree].sum(axis=1) - weights[:, subtree].sum(axis=1)[:, None] * joints[joint]
        world = np.cross(moved, vertex_gradient).sum(axis=0)
        gradient[6 + 3 * slot:9 + 3 * slot] = rotations[parents[joint]].T @ world
    return gradient


@dataclass(frozen=True, eq=False)
class FitResult:
    """
    Outcome of ``fit_pose_to_mask``.

    Attributes:
        params: Final parameters.
        losses: Loss before fitting and after every accepted step.
        step_sizes: Accepted step size of each iteration.
        iterations: Number of accepted steps.
        reason: Why the loop stopped.
    """

    params: HandParams
    losses: List[float]
    step_sizes: List[float] = field(default_factory=list)
    iterations: int = 0
    reason: str = ""

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def _block_scale(blocks: Sequence[str]) -> np.ndarray:
    unknown = set(blocks) - set(PARAMETER_BLOCKS)
    if unknown or not blocks:
        raise ValidationError(
            _('Parameter blocks must be chosen from %(blocks)s.') % {'blocks': ', '.join(PARAMETER_BLOCKS)},
            code='parameter',
        )
    scale = np.zeros(POSE_DOF)
    if "root_trans" in blocks:
        scale[0:3] = TRANSLATION_SCALE
    if "root_rot" in blocks:
        scale[3:6] = 1.0
    if "theta" in blocks:
        scale[6:] = 1.0
    return scale


def fit_pose_to_mask(
    model: SkinnedHandModel,
    init: HandParams,
    target: MaskImage,
    cam: CameraIntrinsics,
    steps: int = 500,
    step_size: float = 50.0,
    size: Optional[int] = None,
    sigma: Optional[float] = None,
    cutoff: float = DEFAULT_CUTOFF,
    blocks: Sequence[str] = PARAMETER_BLOCKS,
) -> FitResult:
    """
    Fit root pose and articulation to an amodal mask by gradient descent.

    Each step follows the negative gradient with translation scaled by 100
    relative to rotation. The step size starts at twice the last accepted
    size (capped at ``step_size``) and is halved until the Armijo condition
    holds; trial poses that cannot be rendered are halved as well. Accepted
    losses never increase.

    Raises:
        FitError: If ``init`` cannot be rendered, or if no trial pose of a step
            can be rendered (the hand left the view); ``params`` then holds the
            last accepted pose.
        ValidationError: For a modal target or a size mismatch.
    """
    scale = _block_scale(blocks)
    faces = model.faces

    def evaluate(params):
        posed = forward_kinematics(model, params)
        loss, vertex_gradient, _render = silhouette_loss_grad_vertices(
            posed.vertices, faces, cam, target, size=size, sigma=sigma, cutoff=cutoff
        )
        return loss, posed, vertex_gradient

    try:
        loss, posed, vertex_gradient = evaluate(init)
    except RenderError as error:
        raise FitError(f"Initial pose cannot be rendered: {error}", params=init, losses=[]) from error

    params = init
    losses, sizes = [loss], []
    eta = validate_positive(step_size, "step_size")
    reason = "steps"
    for iteration in range(int(steps)):
        gradient = pose_gradient(model, posed, vertex_gradient)
        direction = -scale * gradient
        slope = float(gradient @ direction)
        if loss == 0.0 or slope == 0.0:
            reason = "stationary"
            break
        eta = min(2.0 * eta, step_size)
        rendered, last_error = False, None
        while eta >= MIN_STEP:
            trial = apply_pose_update(params, eta * direction)
            try:
                trial_loss, trial_posed, trial_gradient = evaluate(trial)
            except RenderError as error:
                last_error = error
                eta *= 0.5
                continue
            rendered = True
            if trial_loss <= loss + ARMIJO * eta * slope:
                break
            eta *= 0.5
        else:
            if last_error is not None and not rendered:
                logger.warning(f"Silhouette fit diverged at step {iteration}: {last_error}")
                raise FitError(
                    f"No trial pose of step {iteration} could be rendered: {last_error}",
                    params=params,
                    losses=losses,
                    step_sizes=sizes,
                ) from last_error
            reason = "line_search"
            break
        params, loss, posed, vertex_gradient = trial, trial_loss, trial_posed, trial_gradient
        losses.append(loss)
        sizes.append(eta)
        if iteration % 50 == 0:
            logger.debug(f"Silhouette fit step {iteration}: loss {loss:.6g}, step {eta:.3g}")

    logger.info(f"Silhouette fit stopped ({reason}) after {len(sizes)} steps: loss {losses[0]:.6g} -> {loss:.6g}")
    return FitResult(params=params, losses=losses, step_sizes=sizes, iterations=len(sizes), reason=reason)
