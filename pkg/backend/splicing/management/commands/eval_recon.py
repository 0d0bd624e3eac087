from pathlib import Path

from splicing import pipelines
from splicing.management.base import SpliceCommand
from training.losses import PERCEPTUAL_BACKENDS


class Command(SpliceCommand):
    help = 'Measure how well a SpliceNet checkpoint reconstructs images fed as their own structure and appearance'

    def add_arguments(self, parser):
        parser.add_argument('checkpoint')
        parser.add_argument('image_dir')
        parser.add_argument('--out', required=True, help='CSV report')
        parser.add_argument('--backend', choices=sorted(PERCEPTUAL_BACKENDS), default='lpips')
        parser.add_argument('--image-size', type=int, default=224)
        super().add_arguments(parser)

    def manifest_dir(self, options):
        return Path(options['out']).parent

    def run(self, manifest, options):
        config = self.load_config(options)
        report = pipelines.cmd_eval_reconstruction(
            options['checkpoint'], options['image_dir'], options['out'], manifest, config.vit,
            backend=options['backend'], device=self.device(options), image_size=options['image_size'],
            vit_resize=config.vit_resize,
        )
        return {'images': len(report.rows), 'mean mse': f"{report.mean_mse:.6f}",
                'mean perceptual': f"{report.mean_perceptual:.6f}"}
