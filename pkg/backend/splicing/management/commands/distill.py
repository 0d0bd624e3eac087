from pathlib import Path

from distillation.descriptor_index import METRICS
from extractor.features import DEFAULT_WINDOW
from splicing import pipelines
from splicing.management.base import SpliceCommand


class Command(SpliceCommand):
    help = 'Pair the images of a directory by mutual nearest neighbours of their structure descriptors'

    def add_arguments(self, parser):
        parser.add_argument('data_dir')
        parser.add_argument('--k', type=int, default=10)
        parser.add_argument('--window', type=int, default=DEFAULT_WINDOW)
        parser.add_argument('--metric', choices=METRICS, default='cosine')
        parser.add_argument('--out', required=True, help='pair file to write')
        super().add_arguments(parser)

    def manifest_dir(self, options):
        return Path(options['out']).parent

    def run(self, manifest, options):
        config = self.load_config(options)
        return pipelines.cmd_distill(
            options['data_dir'], options['k'], options['out'], manifest, config.vit,
            window=options['window'], metric=options['metric'], vit_resize=config.vit_resize,
            device=self.device(options), progress=not options['no_progress'],
        )
