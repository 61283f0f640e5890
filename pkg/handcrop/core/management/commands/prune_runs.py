"""
Management command to delete run history older than a number of days.
"""
import logging
import shutil
from datetime import timedelta
from pathlib import Path

from django.core.management.base import BaseCommand
from django.utils import timezone

from handcrop.core.models import ExperimentRun

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Delete experiment runs (and optionally their output directories) older than N days'

    def add_arguments(self, parser):
        parser.add_argument(
            '--days',
            type=int,
            default=30,
            help='Number of days after which to delete runs (default: 30)'
        )
        parser.add_argument(
            '--dry-run',
            action='store_true',
            help='Show what would be deleted without actually deleting'
        )
        parser.add_argument(
            '--delete-files',
            action='store_true',
            help='Also remove the output directories of deleted runs'
        )

    def handle(self, *args, **options):
        days = options['days']
        dry_run = options['dry_run']
        cutoff_date = timezone.now() - timedelta(days=days)

        self.stdout.write(self.style.SUCCESS(
            f"{'[DRY RUN] ' if dry_run else ''}Pruning runs older than {days} days "
            f"(created before {cutoff_date.strftime('%Y-%m-%d %H:%M:%S')})"
        ))

        old_runs = ExperimentRun.objects.filter(created_at__lt=cutoff_date)
        run_count = old_runs.count()
        if run_count == 0:
            self.stdout.write(self.style.WARNING('No runs to prune.'))
            return

        self.stdout.write(f"\nFound {run_count} run(s) to delete:")
        for run in old_runs[:5]:
            self.stdout.write(f"  - {run} - created {run.created_at.strftime('%Y-%m-%d')}")

        if dry_run:
            self.stdout.write(self.style.WARNING(
                "\n[DRY RUN] No runs were actually deleted. Run without --dry-run to delete."
            ))
            return

        deleted_runs = 0
        deleted_dirs = 0
        for run in old_runs:
            output_dir = Path(run.output_dir) if run.output_dir else None
            label = str(run)
            try:
                run.delete()
                deleted_runs += 1
                logger.info(f"Deleted run record: {label}")
                # Directories shared with a newer run are kept.
                if (
                    options['delete_files'] and output_dir is not None and output_dir.is_dir()
                    and not ExperimentRun.objects.filter(output_dir=str(output_dir)).exists()
                ):
                    shutil.rmtree(output_dir)
                    deleted_dirs += 1
                    logger.info(f"Deleted run directory: {output_dir}")
            except OSError as e:
                logger.error(f"Error deleting output of {label}: {str(e)}")
                self.stdout.write(self.style.ERROR(f"Failed to delete {output_dir}: {str(e)}"))

        self.stdout.write(self.style.SUCCESS(
            f"\nSuccessfully deleted:\n"
            f"  - {deleted_runs} run(s)\n"
            f"  - {deleted_dirs} output director{'y' if deleted_dirs == 1 else 'ies'}"
        ))
