from pathlib import Path

from inversion.invert import PARAMETERIZATIONS, InversionConfig
from splicing import pipelines
from splicing.management.base import SpliceCommand
from utils.errors import ConfigError


def parse_layers(text):
    try:
        return [int(layer) for layer in text.split(',') if layer.strip()]
    except ValueError as e:
        raise ConfigError(f"--layers expects comma-separated layer numbers, got {text!r}") from e


class Command(SpliceCommand):
    help = 'Invert a ViT feature of an image with a deep image prior'

    def add_arguments(self, parser):
        parser.add_argument('image')
        parser.add_argument('--out-dir', required=True)
        parser.add_argument('--feature', default='cls@12', help='cls@<layer>, keys@<layer> or selfsim@<layer>')
        parser.add_argument('--layers', help='invert the [CLS] token at each of these layers, e.g. 1,4,8,12')
        parser.add_argument('--steps', type=int, default=2000)
        parser.add_argument('--lr', type=float, default=1e-3)
        parser.add_argument('--output-size', type=int, default=224)
        parser.add_argument('--parameterization', choices=PARAMETERIZATIONS, default='prior')
        super().add_arguments(parser)

    def manifest_dir(self, options):
        return Path(options['out_dir'])

    def run(self, manifest, options):
        config = self.load_config(options)
        inversion = InversionConfig(
            feature_selector=options['feature'],
            steps=options['steps'],
            lr=options['lr'],
            prior_seed=config.seed,
            output_size=options['output_size'],
            parameterization=options['parameterization'],
        )
        layers = parse_layers(options['layers']) if options['layers'] else None
        return pipelines.cmd_invert(
            options['image'], inversion, options['out_dir'], manifest, config.vit, layers=layers,
            device=self.device(options), progress=not options['no_progress'],
        )
