# Generated by Django 6.0 on 2026-10-19 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                (
                    "created_at",
                    models.DateTimeField(
                        auto_now_add=True,
                        db_index=True,
                        help_text="Timestamp when the record was created",
                    ),
                ),
                (
                    "updated_at",
                    models.DateTimeField(
                        auto_now=True,
                        help_text="Timestamp when the record was last updated",
                    ),
                ),
                (
                    "command",
                    models.CharField(
                        db_index=True,
                        help_text="Management command that produced the run",
                        max_length=64,
                    ),
                ),
                (
                    "seed",
                    models.BigIntegerField(
                        blank=True,
                        help_text="Random seed of the run, if it uses randomness",
                        null=True,
                    ),
                ),
                (
                    "output_dir",
                    models.CharField(
                        blank=True,
                        help_text="Directory holding the run's output files",
                        max_length=1024,
                    ),
                ),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("running", "Running"),
                            ("succeeded", "Succeeded"),
                            ("failed", "Failed"),
                        ],
                        db_index=True,
                        default="running",
                        help_text="Current state of the run",
                        max_length=16,
                    ),
                ),
                (
                    "exit_code",
                    models.PositiveSmallIntegerField(
                        blank=True,
                        help_text="Process exit code once the run has finished",
                        null=True,
                    ),
                ),
                (
                    "tool_version",
                    models.CharField(
                        help_text="handcrop version that produced the run",
                        max_length=32,
                    ),
                ),
                (
                    "parameters",
                    models.JSONField(
                        blank=True,
                        default=dict,
                        help_text="Merged experiment configuration",
                    ),
                ),
                (
                    "error",
                    models.JSONField(
                        blank=True,
                        help_text="Machine-readable error of a failed run",
                        null=True,
                    ),
                ),
            ],
            options={
                "verbose_name": "Experiment run",
                "verbose_name_plural": "Experiment runs",
                "ordering": ["-created_at"],
                "indexes": [
                    models.Index(
                        fields=["command", "status"],
                        name="core_run_command_status_idx",
                    )
                ],
            },
        ),
        migrations.CreateModel(
            name="RunArtifact",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                (
                    "created_at",
                    models.DateTimeField(
                        auto_now_add=True,
                        db_index=True,
                        help_text="Timestamp when the record was created",
                    ),
                ),
                (
                    "updated_at",
                    models.DateTimeField(
                        auto_now=True,
                        help_text="Timestamp when the record was last updated",
                    ),
                ),
                (
                    "path",
                    models.CharField(
                        help_text="File path relative to the run's output directory",
                        max_length=1024,
                    ),
                ),
                (
                    "sha256",
                    models.CharField(
                        help_text="SHA-256 of the file contents",
                        max_length=64,
                    ),
                ),
                (
                    "size",
                    models.BigIntegerField(default=0, help_text="File size in bytes"),
                ),
                (
                    "run",
                    models.ForeignKey(
                        help_text="Run that wrote the file",
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="artifacts",
                        to="core.experimentrun",
                    ),
                ),
            ],
            options={
                "verbose_name": "Run artifact",
                "verbose_name_plural": "Run artifacts",
                "ordering": ["path"],
                "constraints": [
                    models.UniqueConstraint(
                        fields=("run", "path"), name="unique_artifact_path_per_run"
                    )
                ],
            },
        ),
    ]
