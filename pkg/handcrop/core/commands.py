"""
Shared behaviour of the handcrop management commands.

Every command exits 0 on success, 1 on a validation error, 2 on a numerical
failure and 3 on an I/O error. Failures are reported as one JSON object on
stderr: ``{"error": ..., "module": ..., "exit_code": ...}``.
"""

import json
import logging
import sys
from typing import Optional

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand

from .exceptions import NumericalError
from .experiments import ExperimentConfig, RunRecorder, load_config
from .serializers import dumps, load_model
from .hand_model import SkinnedHandModel, default_hand_model

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


def error_payload(error: Exception, command: str) -> dict:
    """Machine-readable description of a command failure."""
    if isinstance(error, ValidationError):
        return {
            "error": " ".join(str(message) for message in error.messages),
            "module": command,
            "code": getattr(error, "code", None),
            "exit_code": EXIT_VALIDATION,
        }
    if isinstance(error, NumericalError):
        payload = error.as_dict()
        payload["exit_code"] = EXIT_NUMERICAL
        return payload
    return {
        "error": f"{type(error).__name__}: {error}",
        "module": command,
        "path": getattr(error, "filename", None),
        "exit_code": EXIT_IO,
    }


class HandcropCommand(BaseCommand):
    """
    Base class of the handcrop commands.

    Subclasses implement ``run(**options)``. Experiment commands set
    ``experiment = True`` to get the common ``--config``, ``--seed``,
    ``--out`` and ``--workers`` flags; ``self.config`` then holds the merged
    configuration. Commands that write files open a run with
    ``self.start_run()`` and call ``self.recorder.finish()`` at the end.
    """

    experiment = False
    command_name = ""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.config: Optional[ExperimentConfig] = None
        self.recorder: Optional[RunRecorder] = None

    def add_arguments(self, parser):
        if self.experiment:
            parser.add_argument('--config', help='JSON file overriding the settings defaults')
            parser.add_argument('--seed', type=int, help='Random seed')
            parser.add_argument('--out', help='Output directory')
            parser.add_argument('--workers', type=int, help='Worker threads')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def config_overrides(self, options) -> dict:
        """Configuration keys set by command-specific flags."""
        return {}

    def handle(self, *args, **options):
        try:
            if self.experiment:
                self.config = load_config(
                    options.get('config'),
                    command=self.command_name,
                    seed=options.get('seed'),
                    output_dir=options.get('out'),
                    workers=options.get('workers'),
                    **self.config_overrides(options),
                )
            self.run(**options)
        except (ValidationError, NumericalError, OSError) as error:
            self.fail(error)

    def run(self, **options):
        raise NotImplementedError

    def fail(self, error: Exception):
        payload = error_payload(error, self.command_name)
        logger.error(f"{self.command_name} failed: {payload['error']}")
        if self.recorder is not None:
            self.recorder.fail(payload["exit_code"], payload)
        self.stderr.write(json.dumps(payload, sort_keys=True), style_func=lambda text: text)
        sys.exit(payload["exit_code"])

    def start_run(self, **parameters) -> RunRecorder:
        self.recorder = RunRecorder.for_config(self.command_name, self.config, **parameters).start()
        return self.recorder

    def hand_model(self, path=None) -> SkinnedHandModel:
        if path:
            if self.recorder is not None:
                self.recorder.add_input("model", path)
            return load_model(path)
        return default_hand_model()

    def write_json(self, data) -> None:
        """Print a JSON document on stdout."""
        self.stdout.write(dumps(data), ending="")
