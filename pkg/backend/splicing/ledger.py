import logging
from pathlib import Path

from django.db import DatabaseError, transaction
from django.utils import timezone

from splicing.manifest import RunManifest
from splicing.models import Run, RunArtifact
from utils.image_io import file_sha256

logger = logging.getLogger(__name__)


def open_run(manifest: RunManifest, seed: int):
    """Create the ledger row for a starting run; None when the ledger tables are unavailable"""
    try:
        return Run.objects.create(command=manifest.command, seed=seed)
    except DatabaseError as e:
        logger.warning(f"Run ledger unavailable, {manifest.command} is not recorded: {e}")
        return None


def close_run(run, manifest: RunManifest):
    if run is None:
        return
    try:
        with transaction.atomic():
            run.status = 'succeeded' if manifest.exit_code == 0 else 'failed'
            run.exit_code = manifest.exit_code
            run.error_message = manifest.error
            run.finished_at = timezone.now()
            run.manifest = manifest.to_dict()
            run.save()
            for name, path in manifest.outputs.items():
                path = Path(path)
                RunArtifact.objects.create(
                    run=run,
                    path=str(path),
                    kind=manifest.output_kinds.get(name, 'other'),
                    sha256=file_sha256(path) if path.is_file() else '',
                )
    except DatabaseError as e:
        logger.warning(f"Could not record run {run.run_id}: {e}")
