"""
Experiment configuration and run bookkeeping.

Configuration is layered: ``settings.HANDCROP`` defaults, then an optional
JSON file given with ``--config``, then command-line flags. The merged result
is an immutable, validated ``ExperimentConfig``.

``RunRecorder`` owns a run's output directory. It records the run in the
database and, once the command has finished writing, a ``manifest.json``
listing inputs, seed, tool version and a content hash for every output file.
"""

import hashlib
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from django.conf import settings
from django.core.exceptions import ValidationError
from django.db import DatabaseError
from django.utils.translation import gettext_lazy as _

from .camera import CameraIntrinsics
from .models import ExperimentRun, RunArtifact
from .serializers import load_intrinsics, read_json, write_json
from .validators import validate_fraction, validate_interval, validate_positive

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

# Keys that never change the content of a run's outputs.
VOLATILE_KEYS = ("output_dir", "workers")


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class ExperimentConfig:
    """Every tunable of a handcrop experiment."""

    seed: int
    output_dir: str
    workers: int
    image_width: int
    image_height: int
    fov_degrees: float
    intrinsics: Optional[str]
    population_size: int
    depth_range_mm: Tuple[float, float]
    lookalike_fraction: float
    shift_margin_px: float
    near_crop_px: float
    far_crop_px: float
    centered_max_px: float
    sigma: Optional[float]
    sigma_factor: float
    cutoff_factor: float
    render_size: int
    fit_steps: int
    fit_step_size: float
    grasp_hidden: Tuple[int, ...]
    grasp_epochs: int
    grasp_learning_rate: float

    def __post_init__(self):
        for name in ("workers", "image_width", "image_height", "fov_degrees", "population_size",
                     "render_size", "fit_steps", "fit_step_size", "grasp_epochs",
                     "grasp_learning_rate", "sigma_factor", "cutoff_factor", "far_crop_px",
                     "centered_max_px"):
            validate_positive(getattr(self, name), name)
        if self.fov_degrees >= 180:
            raise ValidationError(_('fov_degrees must be below 180.'), code='range')
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError(_('seed must be a non-negative integer.'), code='range')
        if self.near_crop_px < 0 or self.shift_margin_px < 0:
            raise ValidationError(_('Crop thresholds and margins must not be negative.'), code='range')
        if self.near_crop_px > self.far_crop_px:
            raise ValidationError(_('near_crop_px must not exceed far_crop_px.'), code='range')
        if self.sigma is not None:
            validate_positive(self.sigma, "sigma")
        validate_interval(*self.depth_range_mm, "depth_range_mm")
        validate_fraction(self.lookalike_fraction, "lookalike_fraction")
        for width in self.grasp_hidden:
            validate_positive(width, "grasp_hidden")

    def camera(self) -> CameraIntrinsics:
        """Intrinsics from the ``intrinsics`` file, else from the image size and field of view."""
        if self.intrinsics:
            return load_intrinsics(self.intrinsics)
        return CameraIntrinsics.from_fov(self.image_width, self.image_height, self.fov_degrees)

    def as_dict(self) -> dict:
        data = asdict(self)
        data["depth_range_mm"] = list(self.depth_range_mm)
        data["grasp_hidden"] = list(self.grasp_hidden)
        return data

    def reproducible_dict(self) -> dict:
        """Parameters that determine the outputs, for manifests."""
        return {key: value for key, value in self.as_dict().items() if key not in VOLATILE_KEYS}


FIELD_NAMES = tuple(f.name for f in fields(ExperimentConfig))


def _coerce(values: dict) -> dict:
    values = dict(values)
    try:
        for name in ("seed", "workers", "image_width", "image_height", "population_size",
                     "render_size", "fit_steps", "grasp_epochs"):
            values[name] = int(values[name])
        for name in ("fov_degrees", "lookalike_fraction", "shift_margin_px", "near_crop_px",
                     "far_crop_px", "centered_max_px", "sigma_factor", "cutoff_factor",
                     "fit_step_size", "grasp_learning_rate"):
            values[name] = float(values[name])
        if values["sigma"] is not None:
            values["sigma"] = float(values["sigma"])
        low, high = values["depth_range_mm"]
        values["depth_range_mm"] = (float(low), float(high))
        values["grasp_hidden"] = tuple(int(width) for width in values["grasp_hidden"])
        values["output_dir"] = str(values["output_dir"])
    except (TypeError, ValueError) as error:
        raise ValidationError(_('Invalid configuration value: %(error)s') % {'error': error}, code='parameter')
    return values


def default_values() -> Dict[str, object]:
    defaults = {key.lower(): value for key, value in settings.HANDCROP.items()}
    defaults.setdefault("intrinsics", None)
    defaults.setdefault("sigma", None)
    return defaults


def load_config(config_path=None, command: Optional[str] = None, **overrides) -> ExperimentConfig:
    """
    Merge settings defaults, an optional JSON file and explicit overrides.

    ``None`` overrides are ignored, so unset CLI flags keep the file's or the
    settings' value. With ``command`` the default output directory is the
    command's subdirectory of ``HANDCROP["OUTPUT_DIR"]``.

    Raises:
        ValidationError: On unknown keys or invalid values.
    """
    values = default_values()
    if command:
        values["output_dir"] = str(Path(values["output_dir"]) / command)
    layers: List[dict] = []
    if config_path:
        data = read_json(config_path)
        if not isinstance(data, dict):
            raise ValidationError(_('A config file must hold a JSON object.'), code='parameter')
        layers.append(data)
    layers.append({key: value for key, value in overrides.items() if value is not None})
    for layer in layers:
        unknown = sorted(set(layer) - set(FIELD_NAMES))
        if unknown:
            raise ValidationError(
                _('Unknown configuration keys: %(keys)s') % {'keys': ', '.join(unknown)},
                code='parameter',
            )
        values.update(layer)
    missing = sorted(set(FIELD_NAMES) - set(values))
    if missing:
        raise ValidationError(
            _('Missing configuration keys: %(keys)s') % {'keys': ', '.join(missing)},
            code='parameter',
        )
    return ExperimentConfig(**_coerce({name: values[name] for name in FIELD_NAMES}))


class RunRecorder:
    """
    Output directory, run record and manifest of one command invocation.

    Files are registered with ``output`` (returns the absolute path to write)
    and hashed by ``finish``. Without the run-history tables the run is still
    executed and its manifest written; only the database record is skipped.
    """

    def __init__(self, command: str, output_dir, seed: Optional[int] = None, parameters: Optional[dict] = None):
        self.command = command
        self.output_dir = Path(output_dir)
        self.seed = seed
        self.parameters = dict(parameters or {})
        self.inputs: Dict[str, dict] = {}
        self.outputs: List[str] = []
        self.run: Optional[ExperimentRun] = None

    @classmethod
    def for_config(cls, command: str, config: ExperimentConfig, **parameters) -> "RunRecorder":
        merged = config.reproducible_dict()
        merged.update(parameters)
        return cls(command, config.output_dir, seed=config.seed, parameters=merged)

    def start(self) -> "RunRecorder":
        """
        Create the output directory and the run record.

        Raises:
            OSError: If the directory cannot be created.
        """
        self.output_dir.mkdir(parents=True, exist_ok=True)
        try:
            self.run = ExperimentRun.objects.create(
                command=self.command,
                seed=self.seed,
                output_dir=str(self.output_dir.resolve()),
                tool_version=settings.TOOL_VERSION,
                parameters=self.parameters,
            )
        except DatabaseError as error:
            logger.warning(f"Run history unavailable, not recording {self.command}: {error}")
            self.run = None
        logger.info(f"Started {self.command} run in {self.output_dir}")
        return self

    def add_input(self, name: str, path) -> None:
        """List an input file in the manifest, with its hash."""
        if path:
            self.inputs[name] = {"path": str(path), "sha256": file_sha256(path)}

    def output(self, name: str) -> Path:
        if name not in self.outputs:
            self.outputs.append(name)
        return self.output_dir / name

    def manifest(self) -> dict:
        entries = []
        for name in self.outputs:
            path = self.output_dir / name
            entries.append({"path": name, "sha256": file_sha256(path), "size": path.stat().st_size})
        return {
            "command": self.command,
            "tool_version": settings.TOOL_VERSION,
            "seed": self.seed,
            "inputs": self.inputs,
            "parameters": self.parameters,
            "outputs": entries,
        }

    def finish(self) -> Path:
        """Write the manifest, store artifacts and mark the run successful."""
        manifest = self.manifest()
        path = write_json(self.output_dir / MANIFEST_NAME, manifest)
        if self.run is not None:
            RunArtifact.objects.bulk_create([
                RunArtifact(run=self.run, path=entry["path"], sha256=entry["sha256"], size=entry["size"])
                for entry in manifest["outputs"]
            ])
            self.run.finish(0)
        logger.info(f"Finished {self.command}: {len(self.outputs)} files in {self.output_dir}")
        return path

    def fail(self, exit_code: int, error: dict) -> None:
        if self.run is not None:
            try:
                self.run.finish(exit_code, error)
            except DatabaseError as db_error:
                logger.error(f"Could not record failure of {self.command}: {db_error}")
