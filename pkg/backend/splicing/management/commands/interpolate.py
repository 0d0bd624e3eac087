from pathlib import Path

from splicing import pipelines
from splicing.management.base import SpliceCommand
from utils.errors import ConfigError


def parse_alphas(text):
    try:
        return [float(a) for a in text.split(',') if a.strip()]
    except ValueError as e:
        raise ConfigError(f"--alphas expects comma-separated numbers, got {text!r}") from e


class Command(SpliceCommand):
    help = "Render a structure image along the token path from its own appearance to another image's"

    def add_arguments(self, parser):
        parser.add_argument('checkpoint')
        parser.add_argument('structure')
        parser.add_argument('appearance')
        parser.add_argument('--alphas', default='0,0.25,0.5,0.75,1')
        parser.add_argument('--out-dir', required=True)
        super().add_arguments(parser)

    def manifest_dir(self, options):
        return Path(options['out_dir'])

    def run(self, manifest, options):
        config = self.load_config(options)
        return pipelines.cmd_interpolate(
            options['checkpoint'], options['structure'], options['appearance'], parse_alphas(options['alphas']),
            options['out_dir'], manifest, config.vit, device=self.device(options),
            max_side=options['max_side'], vit_resize=config.vit_resize,
        )
