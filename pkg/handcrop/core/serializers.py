"""
File formats for handcrop.

JSON files hold hand parameters, models, intrinsics, keypoints, networks and
grasp datasets; CSV files hold ambiguity records, dense KPE maps and loss
trajectories; masks are binary PGM (P5) images with a JSON sidecar carrying
the amodal flag. Malformed content raises ``ValidationError``; ``OSError``
from the file system is left to the caller.
"""

import csv
import json
import logging
import re
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
from django.core.exceptions import ValidationError
from django.core.serializers.json import DjangoJSONEncoder
from django.utils.translation import gettext_lazy as _

from .camera import BLOCK_SIZE, CameraIntrinsics
from .grasp import GraspMlp, GraspSample
from .hand_model import HandParams, KeypointSet2D, KeypointSet3D, SkinnedHandModel, load_mano_model
from .metrics import RECORD_FIELDS, AmbiguityRecord, FrameKeypoints
from .softras import MaskImage

logger = logging.getLogger(__name__)

KPE_COLUMNS = tuple(
    f"{angle}_{kind}{k}" for angle in ("tx", "ty") for k in range(BLOCK_SIZE // 4) for kind in ("sin", "cos")
)


class NumpyJSONEncoder(DjangoJSONEncoder):
    """JSON encoder that also understands numpy arrays and scalars."""

    def default(self, o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.bool_):
            return bool(o)
        return super().default(o)


def dumps(data) -> str:
    return json.dumps(data, cls=NumpyJSONEncoder, indent=2) + "\n"


def read_json(path) -> dict:
    """
    Read a JSON document.

    Raises:
        ValidationError: If the file is not valid JSON.
        OSError: If the file cannot be read.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        try:
            return json.load(handle)
        except json.JSONDecodeError as error:
            raise ValidationError(
                _('%(name)s is not valid JSON: %(error)s') % {'name': path.name, 'error': error.msg},
                code='parameter',
            )


def write_json(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data), encoding="utf-8")
    return path


def load_hand_params(path) -> HandParams:
    return HandParams.from_dict(read_json(path))


def load_intrinsics(path) -> CameraIntrinsics:
    return CameraIntrinsics.from_dict(read_json(path))


def load_model(path) -> SkinnedHandModel:
    """Read a handcrop JSON model, or MANO data from ``.npz``/``.pkl``."""
    path = Path(path)
    if path.suffix in (".npz", ".pkl"):
        return load_mano_model(path)
    return SkinnedHandModel.from_dict(read_json(path))


def _keypoint_array(data, key: str):
    if isinstance(data, dict):
        if key not in data:
            raise ValidationError(_('Keypoint file needs a "%(key)s" entry.') % {'key': key}, code='parameter')
        return data[key]
    return data


def load_keypoints_3d(path) -> KeypointSet3D:
    """Read ``{"joints": [[x, y, z] x 21]}`` or a bare 21x3 list."""
    return KeypointSet3D(_keypoint_array(read_json(path), "joints"))


def load_keypoints_2d(path) -> KeypointSet2D:
    """Read ``{"points": [[u, v] x 21]}`` or a bare 21x2 list."""
    return KeypointSet2D(_keypoint_array(read_json(path), "points"))


def _optional(value, kind):
    return None if value is None else kind(value)


def _frames(data) -> List[dict]:
    if isinstance(data, dict) and "frames" in data:
        return list(data["frames"])
    if isinstance(data, dict) and "joints" in data:
        return [{"right": data["joints"]}]
    return [data]


def load_frames(pred_path, gt_path) -> List[FrameKeypoints]:
    """
    Pair prediction and ground-truth frames for evaluation.

    Each file is either one frame or ``{"frames": [...]}``. A frame may carry
    ``left``/``right`` 21x3 joints (null for an absent hand), ground truth may
    add ``left_2d``/``right_2d`` 21x2 keypoints, and ``id`` names the frame.
    A plain ``{"joints": ...}`` file is a single right hand.

    Raises:
        ValidationError: If the files hold different frame counts or
            malformed keypoints.
    """
    predictions = _frames(read_json(pred_path))
    truths = _frames(read_json(gt_path))
    if len(predictions) != len(truths):
        raise ValidationError(
            _('Prediction has %(pred)s frames but ground truth has %(gt)s.') % {
                'pred': len(predictions), 'gt': len(truths),
            },
            code='dimension',
        )
    frames = []
    for index, (pred, gt) in enumerate(zip(predictions, truths)):
        frames.append(FrameKeypoints(
            frame_id=str(gt.get("id", pred.get("id", index))),
            pred_left=_optional(pred.get("left"), KeypointSet3D),
            pred_right=_optional(pred.get("right"), KeypointSet3D),
            gt_left=_optional(gt.get("left"), KeypointSet3D),
            gt_right=_optional(gt.get("right"), KeypointSet3D),
            gt2d_left=_optional(gt.get("left_2d"), KeypointSet2D),
            gt2d_right=_optional(gt.get("right_2d"), KeypointSet2D),
        ))
    return frames


def write_records_csv(path, records: Iterable[AmbiguityRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for record in records:
            writer.writerow([record.pair_id] + [repr(record.metric(name)) for name in RECORD_FIELDS[1:]])
    return path


def read_records_csv(path) -> List[AmbiguityRecord]:
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != RECORD_FIELDS:
            raise ValidationError(
                _('Record CSV header must be %(header)s.') % {'header': ','.join(RECORD_FIELDS)},
                code='parameter',
            )
        try:
            return [
                AmbiguityRecord(row["pair_id"], *(float(row[name]) for name in RECORD_FIELDS[1:]))
                for row in reader
            ]
        except (TypeError, ValueError) as error:
            raise ValidationError(_('Malformed record row: %(error)s') % {'error': error}, code='parameter')


def write_kpe_dense_csv(path, dense: np.ndarray) -> Path:
    """One row per cell: ``row, col`` and the 16 values of the cell's KPE block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("row", "col") + KPE_COLUMNS)
        for row in range(dense.shape[0]):
            for col in range(dense.shape[1]):
                writer.writerow([row, col] + [repr(float(v)) for v in dense[row, col]])
    return path


def write_loss_csv(path, losses: Sequence[float], step_sizes: Sequence[float]) -> Path:
    """Loss trajectory: step 0 is the initial loss and has no step size."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("step", "loss", "step_size"))
        for step, loss in enumerate(losses):
            size = "" if step == 0 else repr(float(step_sizes[step - 1]))
            writer.writerow([step, repr(float(loss)), size])
    return path


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_pgm(path, mask: MaskImage, threshold: float = 0.5) -> Path:
    """
    Write a mask as binary P5 PGM (0 or 255) plus its JSON sidecar.

    Soft masks are binarized at ``threshold``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.where(mask.values >= threshold, 255, 0).astype(np.uint8)
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    path.write_bytes(header + pixels.tobytes())
    write_json(_sidecar(path), {"amodal": mask.amodal, "width": mask.width, "height": mask.height})
    return path


_PGM_HEADER = re.compile(rb"^P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def read_pgm(path, amodal: Optional[bool] = None) -> MaskImage:
    """
    Read a P5 PGM mask; pixels above half the maximum value are foreground.

    The amodal flag comes from the sidecar JSON unless given explicitly.

    Raises:
        ValidationError: For a malformed image, a sidecar that disagrees with
            the image size, or a missing amodal flag.
    """
    path = Path(path)
    raw = path.read_bytes()
    match = _PGM_HEADER.match(raw)
    if not match:
        raise ValidationError(_('%(name)s is not a binary PGM image.') % {'name': path.name}, code='parameter')
    width, height, maxval = (int(group) for group in match.groups())
    if maxval <= 0 or maxval >= 256:
        raise ValidationError(_('Only 8-bit PGM masks are supported.'), code='parameter')
    data = np.frombuffer(raw, dtype=np.uint8, offset=match.end())
    if data.size < width * height:
        raise ValidationError(_('%(name)s is truncated.') % {'name': path.name}, code='parameter')
    values = (data[:width * height].reshape(height, width) > maxval / 2).astype(np.float64)

    if amodal is None:
        sidecar = _sidecar(path)
        if not sidecar.exists():
            raise ValidationError(
                _('%(name)s has no sidecar declaring whether the mask is amodal.') % {'name': path.name},
                code='parameter',
            )
        meta = read_json(sidecar)
        if "amodal" not in meta:
            raise ValidationError(_('The mask sidecar has no "amodal" flag.'), code='parameter')
        if (meta.get("width", width), meta.get("height", height)) != (width, height):
            raise ValidationError(_('The mask sidecar disagrees with the image size.'), code='dimension')
        amodal = bool(meta["amodal"])
    return MaskImage(values, amodal)


def write_grasp_dataset(path, samples: Iterable[GraspSample]) -> Path:
    rows = []
    for sample in samples:
        row = {"theta": sample.theta.tolist(), "label": sample.label}
        if sample.extra is not None:
            row["extra"] = sample.extra.tolist()
        rows.append(row)
    return write_json(path, {"samples": rows})


def read_grasp_dataset(path) -> List[GraspSample]:
    data = read_json(path)
    rows = data.get("samples") if isinstance(data, dict) else data
    if not isinstance(rows, list):
        raise ValidationError(_('A grasp dataset needs a "samples" list.'), code='parameter')
    try:
        return [GraspSample(row["theta"], row["label"], row.get("extra")) for row in rows]
    except (KeyError, TypeError) as error:
        raise ValidationError(_('Malformed grasp sample: %(error)s') % {'error': error}, code='parameter')


def load_grasp_net(path) -> GraspMlp:
    return GraspMlp.from_dict(read_json(path))
