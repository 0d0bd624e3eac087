"""
Shared plumbing for the splicing management commands: config flags, device
and seed handling, RunManifest writing, the run ledger and exit codes.
"""

import logging
from pathlib import Path

import torch
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from splicing import ledger
from splicing.manifest import RunManifest
from training.config import TrainConfig, load_train_config
from utils.device import resolve_device
from utils.errors import ConfigError, SpliceError

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


def parse_assignments(items):
    """['ALPHA=2', 'vit_patch_size=16'] -> {'ALPHA': '2', 'VIT_PATCH_SIZE': '16'}"""
    values = {}
    for item in items or []:
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip().upper()] = value.strip()
    return values


class SpliceCommand(BaseCommand):
    """
    Subclasses implement `run(manifest, options)` and return a dict of
    printable results; `manifest_dir(options)` says where manifest.json goes.
    """

    preset = 'splice'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='KEY=VALUE run configuration file')
        parser.add_argument('--set', dest='assignments', action='append', default=[], metavar='KEY=VALUE',
                            help='override one configuration value (repeatable)')
        parser.add_argument('--seed', type=int, help='random seed (default: SPLICE_SEED)')
        parser.add_argument('--device', help='compute device (default: SPLICE_DEVICE)')
        parser.add_argument('--no-progress', action='store_true', help='hide progress bars')
        parser.add_argument('--max-side', type=int, help='downscale inputs so the longer side is at most this')

    def manifest_dir(self, options) -> Path:
        raise NotImplementedError

    def run(self, manifest: RunManifest, options):
        raise NotImplementedError

    def load_config(self, options) -> TrainConfig:
        """Preset < SPLICE_VIT settings < --config file < --set flags < --seed"""
        overrides = parse_assignments(options['assignments'])
        overrides['SEED'] = str(self.seed(options))
        return load_train_config(options['config'], overrides, self.preset, defaults=settings.SPLICE_VIT)

    def seed(self, options) -> int:
        return options['seed'] if options['seed'] is not None else settings.SPLICE_SEED

    def device(self, options) -> torch.device:
        return resolve_device(options['device'] or settings.SPLICE_DEVICE)

    def handle(self, *args, **options):
        manifest = RunManifest(command=self.command_name())
        seed = self.seed(options)
        manifest.seeds['global'] = seed
        torch.manual_seed(seed)
        self.stdout.write(f"seed: {seed}")

        run = ledger.open_run(manifest, seed)
        failure = None
        try:
            results = self.run(manifest, options) or {}
            manifest.exit_code = 0
        except SpliceError as e:
            manifest.exit_code = e.exit_code
            manifest.error = str(e)
            failure = e
        finally:
            write_error = self._write_manifest(manifest, options)
            ledger.close_run(run, manifest)

        failure = failure or write_error

        if failure is not None:
            logger.error(f"{manifest.command} failed: {failure}")
            raise CommandError(str(failure), returncode=failure.exit_code) from failure
        for name, value in results.items():
            self.stdout.write(f"{name}: {value}")
        self.stdout.write(self.style.SUCCESS(f"{manifest.command} finished"))

    def command_name(self) -> str:
        return self.__module__.rsplit('.', 1)[-1]

    def _write_manifest(self, manifest, options):
        try:
            path = Path(self.manifest_dir(options)) / MANIFEST_NAME
            manifest.record_output('manifest', path, 'manifest')
            manifest.write(path)
        except SpliceError as e:
            return e
        return None
