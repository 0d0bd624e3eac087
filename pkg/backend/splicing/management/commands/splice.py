from pathlib import Path

from splicing import pipelines
from splicing.management.base import SpliceCommand


class Command(SpliceCommand):
    help = 'Train a generator on one structure/appearance pair and render the spliced image'

    def add_arguments(self, parser):
        parser.add_argument('structure', help='structure image')
        parser.add_argument('appearance', help='appearance image')
        parser.add_argument('--out-dir', required=True)
        parser.add_argument('--iterations', type=int)
        super().add_arguments(parser)

    def manifest_dir(self, options):
        return Path(options['out_dir'])

    def run(self, manifest, options):
        if options['iterations'] is not None:
            options['assignments'].append(f"ITERATIONS={options['iterations']}")
        config = self.load_config(options)
        return pipelines.cmd_splice(
            options['structure'], options['appearance'], config, options['out_dir'], manifest,
            device=self.device(options), max_side=options['max_side'], progress=not options['no_progress'],
        )
