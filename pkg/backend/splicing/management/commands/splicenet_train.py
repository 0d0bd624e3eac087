from pathlib import Path

from generators.splicenet import SpliceNetConfig
from splicing import pipelines
from splicing.management.base import SpliceCommand
from utils.errors import ConfigError


def parse_widths(text):
    try:
        return tuple(int(w) for w in text.split(',') if w.strip())
    except ValueError as e:
        raise ConfigError(f"--encoder-channels expects comma-separated integers, got {text!r}") from e


class Command(SpliceCommand):
    help = 'Train SpliceNet on a distilled pair file'
    preset = 'splicenet'

    def add_arguments(self, parser):
        parser.add_argument('pairs', help='pair file written by the distill command')
        parser.add_argument('data_dir', help='directory holding the paired images')
        parser.add_argument('--out-dir', required=True)
        parser.add_argument('--resume', help='SpliceNet checkpoint to continue from')
        parser.add_argument('--iterations', type=int)
        parser.add_argument('--stem-channels', type=int, default=32)
        parser.add_argument('--encoder-channels', default='64,128,256,512,1024')
        parser.add_argument('--mapping-hidden', type=int, default=768)
        super().add_arguments(parser)

    def manifest_dir(self, options):
        return Path(options['out_dir'])

    def run(self, manifest, options):
        if options['iterations'] is not None:
            options['assignments'].append(f"ITERATIONS={options['iterations']}")
        config = self.load_config(options)
        model_config = SpliceNetConfig(
            stem_channels=options['stem_channels'],
            encoder_channels=parse_widths(options['encoder_channels']),
            cls_dim=config.vit.token_dim,
            mapping_hidden=options['mapping_hidden'],
        )
        return pipelines.cmd_splicenet_train(
            options['pairs'], options['data_dir'], config, options['out_dir'], manifest,
            device=self.device(options), resume=options['resume'], model_config=model_config,
            max_side=options['max_side'], progress=not options['no_progress'],
        )
