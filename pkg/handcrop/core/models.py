"""
Run history for handcrop experiments.

Every file-producing command records an ``ExperimentRun`` and one
``RunArtifact`` per output file, mirroring the run's ``manifest.json``.
"""

from pathlib import Path

from django.db import models
from django.utils.translation import gettext_lazy as _


class TimeStampedModel(models.Model):
    """
    Abstract base model that provides self-updating created and modified fields.
    """
    created_at = models.DateTimeField(
        auto_now_add=True,
        db_index=True,
        help_text=_("Timestamp when the record was created")
    )
    updated_at = models.DateTimeField(
        auto_now=True,
        help_text=_("Timestamp when the record was last updated")
    )

    class Meta:
        abstract = True


class ExperimentRun(TimeStampedModel):
    """
    One invocation of a handcrop command.

    Exit codes follow the CLI: 0 success, 1 validation error, 2 numerical
    failure, 3 I/O error.
    """

    class Status(models.TextChoices):
        RUNNING = 'running', _('Running')
        SUCCEEDED = 'succeeded', _('Succeeded')
        FAILED = 'failed', _('Failed')

    command = models.CharField(
        max_length=64,
        db_index=True,
        help_text=_("Management command that produced the run")
    )
    seed = models.BigIntegerField(
        null=True,
        blank=True,
        help_text=_("Random seed of the run, if it uses randomness")
    )
    output_dir = models.CharField(
        max_length=1024,
        blank=True,
        help_text=_("Directory holding the run's output files")
    )
    status = models.CharField(
        max_length=16,
        choices=Status.choices,
        default=Status.RUNNING,
        db_index=True,
        help_text=_("Current state of the run")
    )
    exit_code = models.PositiveSmallIntegerField(
        null=True,
        blank=True,
        help_text=_("Process exit code once the run has finished")
    )
    tool_version = models.CharField(
        max_length=32,
        help_text=_("handcrop version that produced the run")
    )
    parameters = models.JSONField(
        default=dict,
        blank=True,
        help_text=_("Merged experiment configuration")
    )
    error = models.JSONField(
        null=True,
        blank=True,
        help_text=_("Machine-readable error of a failed run")
    )

    class Meta:
        verbose_name = _("Experiment run")
        verbose_name_plural = _("Experiment runs")
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['command', 'status'], name='core_run_command_status_idx'),
        ]

    def __str__(self) -> str:
        return f"{self.command} #{self.pk} ({self.status})"

    def finish(self, exit_code: int, error: dict = None) -> None:
        """Record the outcome of the run."""
        self.exit_code = exit_code
        self.error = error
        self.status = self.Status.SUCCEEDED if exit_code == 0 else self.Status.FAILED
        self.save(update_fields=['exit_code', 'error', 'status', 'updated_at'])

    @property
    def total_size(self) -> int:
        return sum(artifact.size for artifact in self.artifacts.all())


class RunArtifact(TimeStampedModel):
    """An output file of a run, identified by its content hash."""

    run = models.ForeignKey(
        ExperimentRun,
        on_delete=models.CASCADE,
        related_name='artifacts',
        help_text=_("Run that wrote the file")
    )
    path = models.CharField(
        max_length=1024,
        help_text=_("File path relative to the run's output directory")
    )
    sha256 = models.CharField(
        max_length=64,
        help_text=_("SHA-256 of the file contents")
    )
    size = models.BigIntegerField(
        default=0,
        help_text=_("File size in bytes")
    )

    class Meta:
        verbose_name = _("Run artifact")
        verbose_name_plural = _("Run artifacts")
        ordering = ['path']
        constraints = [
            models.UniqueConstraint(fields=['run', 'path'], name='unique_artifact_path_per_run'),
        ]

    def __str__(self) -> str:
        return self.path

    @property
    def absolute_path(self) -> Path:
        return Path(self.run.output_dir) / self.path
