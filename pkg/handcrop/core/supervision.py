"""
Weighted training losses of a hand-pose prediction.

Each term is computed only when its ground truth is available; absent terms
are reported as ``None`` and do not contribute to the total. The silhouette
term only applies to amodal masks, so a modal mask leaves it absent.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np

from .camera import CameraIntrinsics, project_points
from .grasp import GraspMlp, cross_entropy, mlp_forward
from .hand_model import HandParams, KeypointSet2D, KeypointSet3D, SkinnedHandModel, forward_kinematics
from .softras import MaskImage, render_soft_silhouette, silhouette_l1_loss

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    shape: float = 1.0
    articulation: float = 1.0
    root_rot: float = 1.0
    root_trans: float = 1e-4
    keypoints_3d: float = 1e-3
    keypoints_2d: float = 1e-2
    silhouette: float = 1.0
    grasp: float = 0.1


@dataclass(frozen=True, eq=False)
class SupervisionTarget:
    """Whatever ground truth one training sample has."""

    params: Optional[HandParams] = None
    keypoints_3d: Optional[KeypointSet3D] = None
    keypoints_2d: Optional[KeypointSet2D] = None
    mask: Optional[MaskImage] = None
    grasp_label: Optional[int] = None


@dataclass(frozen=True)
class LossBreakdown:
    terms: Dict[str, Optional[float]]
    total: float

    def as_dict(self) -> dict:
        return {"terms": dict(self.terms), "total": self.total}


def _mean_squared(a, b) -> float:
    return float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))


def supervision_loss(
    model: SkinnedHandModel,
    prediction: HandParams,
    target: SupervisionTarget,
    cam: Optional[CameraIntrinsics] = None,
    weights: LossWeights = LossWeights(),
    grasp_net: Optional[GraspMlp] = None,
    render_size: Optional[int] = None,
) -> LossBreakdown:
    """
    Evaluate every available loss term for one prediction.

    Parameter terms are mean squared errors (radians, mm). Keypoint terms are
    mean squared per-coordinate errors of posed 3D joints (mm) and their
    projections (px). The silhouette term is the L1 mask loss of the soft
    render. The grasp term is the cross-entropy of the grasp head on the
    predicted articulation.

    Raises:
        BehindCameraError: If projected keypoints are behind the camera.
        RenderError: If the silhouette render fails.
    """
    terms: Dict[str, Optional[float]] = {name: None for name in asdict(weights)}
    if target.params is not None:
        terms["shape"] = _mean_squared(prediction.beta, target.params.beta)
        terms["articulation"] = _mean_squared(prediction.theta, target.params.theta)
        terms["root_rot"] = _mean_squared(prediction.root_rot, target.params.root_rot)
        terms["root_trans"] = _mean_squared(prediction.root_trans, target.params.root_trans)

    needs_geometry = target.keypoints_3d is not None or target.keypoints_2d is not None or target.mask is not None
    posed = forward_kinematics(model, prediction) if needs_geometry else None
    if target.keypoints_3d is not None:
        terms["keypoints_3d"] = _mean_squared(posed.joints, KeypointSet3D.coerce(target.keypoints_3d).joints)
    if target.keypoints_2d is not None and cam is not None:
        terms["keypoints_2d"] = _mean_squared(
            project_points(cam, posed.joints), KeypointSet2D.coerce(target.keypoints_2d).points
        )
    if target.mask is not None and cam is not None:
        if target.mask.amodal:
            render = render_soft_silhouette(posed.vertices, model.faces, cam, size=render_size)
            terms["silhouette"] = silhouette_l1_loss(render, target.mask)[0]
        else:
            logger.debug("Skipping the silhouette term for a modal mask")
    if target.grasp_label is not None and grasp_net is not None:
        terms["grasp"] = cross_entropy(mlp_forward(grasp_net, prediction.theta), target.grasp_label)[0]

    scale = asdict(weights)
    total = float(sum(scale[name] * value for name, value in terms.items() if value is not None))
    return LossBreakdown(terms=terms, total=total)
