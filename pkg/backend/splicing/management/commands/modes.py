from pathlib import Path

from splicing import pipelines
from splicing.management.base import SpliceCommand


class Command(SpliceCommand):
    help = 'Cluster the [CLS] tokens of a directory of images into K appearance modes'

    def add_arguments(self, parser):
        parser.add_argument('data_dir')
        parser.add_argument('--k', type=int, required=True)
        parser.add_argument('--out-dir', required=True)
        parser.add_argument('--checkpoint', help='SpliceNet checkpoint; renders a mode grid when given')
        parser.add_argument('--samples', type=int, default=3, help='structure images in the mode grid')
        super().add_arguments(parser)

    def manifest_dir(self, options):
        return Path(options['out_dir'])

    def run(self, manifest, options):
        config = self.load_config(options)
        return pipelines.cmd_modes(
            options['data_dir'], options['k'], options['out_dir'], manifest, config.vit, seed=config.seed,
            checkpoint=options['checkpoint'], samples=options['samples'], vit_resize=config.vit_resize,
            device=self.device(options),
        )
