from pathlib import Path

from splicing import pipelines
from splicing.management.base import SpliceCommand


class Command(SpliceCommand):
    help = "Show the leading principal components of an image's key self-similarity"

    def add_arguments(self, parser):
        parser.add_argument('image')
        parser.add_argument('--out-dir', required=True)
        parser.add_argument('--layer', type=int, help='ViT layer, the deepest when omitted')
        parser.add_argument('--components', type=int, default=3)
        super().add_arguments(parser)

    def manifest_dir(self, options):
        return Path(options['out_dir'])

    def run(self, manifest, options):
        config = self.load_config(options)
        return pipelines.cmd_pca(
            options['image'], options['out_dir'], manifest, config.vit, layer=options['layer'],
            components=options['components'], vit_resize=config.vit_resize, device=self.device(options),
        )
