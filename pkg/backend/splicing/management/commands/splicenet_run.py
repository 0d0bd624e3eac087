from pathlib import Path

from splicing import pipelines
from splicing.management.base import SpliceCommand


class Command(SpliceCommand):
    help = 'Render a structure image with the appearance of another image (or a saved token)'

    def add_arguments(self, parser):
        parser.add_argument('checkpoint')
        parser.add_argument('structure')
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--appearance', help='appearance image')
        source.add_argument('--token-file', help='.npy/.pt token or token matrix')
        parser.add_argument('--token-index', type=int, help='row of a token matrix')
        parser.add_argument('--out', required=True, help='output PNG')
        super().add_arguments(parser)

    def manifest_dir(self, options):
        return Path(options['out']).parent

    def run(self, manifest, options):
        config = self.load_config(options)
        result = pipelines.cmd_splicenet_run(
            options['checkpoint'], options['structure'], options['out'], manifest, config.vit,
            appearance_path=options['appearance'], token_file=options['token_file'],
            token_index=options['token_index'], device=self.device(options),
            max_side=options['max_side'], vit_resize=config.vit_resize,
        )
        return {'image': result['image'], 'inference time': f"{result['inference_seconds']:.4f}s"}
