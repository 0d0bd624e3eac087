import csv
import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import CommandError, call_command
from django.test import SimpleTestCase, TestCase, override_settings

from generators.checkpoints import save_checkpoint
from generators.splicenet import SpliceNetConfig, build_splicenet
from splicing.management.base import parse_assignments
from splicing.models import Run
from utils.errors import ConfigError
from utils.fixtures import fixture_pair, synthetic_collection, write_tiny_vit
from utils.image_io import load_image, save_image

SMALL_MODEL = ['--stem-channels', '8', '--encoder-channels', '8,16', '--mapping-hidden', '16']


def tiny_vit_settings(config):
    return {
        'VIT_WEIGHTS_SOURCE': config.weights_source,
        'VIT_PATCH_SIZE': str(config.patch_size),
        'VIT_NUM_LAYERS': str(config.num_layers),
        'VIT_TOKEN_DIM': str(config.token_dim),
        'VIT_NUM_HEADS': str(config.num_heads),
        'VIT_MLP_DIM': str(config.mlp_dim),
        'VIT_IMAGE_SIZE': str(config.image_size),
    }


class CommandTestCase(TestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.vit = write_tiny_vit(cls.root / 'vit.pt', seed=0)
        cls.settings_override = override_settings(SPLICE_VIT=tiny_vit_settings(cls.vit), SPLICE_DEVICE='cpu')
        cls.settings_override.enable()

        structure, appearance = fixture_pair(64)
        cls.structure = save_image(structure, cls.root / 'structure.png')
        cls.appearance = save_image(appearance, cls.root / 'appearance.png')
        cls.data = cls.root / 'data'
        for index, image in enumerate(synthetic_collection(8, size=32, seed=0)):
            save_image(image, cls.data / f'img{index}.png')

    @classmethod
    def tearDownClass(cls):
        cls.settings_override.disable()
        cls.tmp.cleanup()
        super().tearDownClass()

    def call(self, name, *args, **options):
        out = StringIO()
        call_command(name, *args, '--no-progress', '--set', 'VIT_RESIZE=32', stdout=out, **options)
        return out.getvalue()

    def assertFails(self, exit_code, name, *args, **options):
        with self.assertRaises(CommandError) as ctx:
            self.call(name, *args, **options)
        self.assertEqual(ctx.exception.returncode, exit_code)
        return ctx.exception

    def manifest(self, directory):
        return json.loads((Path(directory) / 'manifest.json').read_text())


class AssignmentTests(SimpleTestCase):
    def test_parse(self):
        self.assertEqual(parse_assignments(['alpha=2', ' VIT_PATCH_SIZE = 16 ']),
                         {'ALPHA': '2', 'VIT_PATCH_SIZE': '16'})
        with self.assertRaises(ConfigError):
            parse_assignments(['ALPHA'])


class SpliceCommandTests(CommandTestCase):
    def test_outputs_manifest_and_ledger(self):
        out_dir = self.root / 'splice'
        output = self.call('splice', str(self.structure), str(self.appearance), '--out-dir', str(out_dir),
                           '--iterations', '2', '--seed', '3')
        self.assertIn('seed: 3', output)
        for name in ('result.png', 'splice_generator.pt', 'losses.csv', 'manifest.json'):
            self.assertTrue((out_dir / name).is_file(), name)
        self.assertEqual(load_image(out_dir / 'result.png').shape, (3, 64, 64))

        manifest = self.manifest(out_dir)
        self.assertEqual(manifest['exit_code'], 0)
        self.assertEqual(manifest['config']['iterations'], 2)
        self.assertEqual(manifest['config']['seed'], 3)
        self.assertIn(str(self.structure), manifest['inputs'])
        for path in manifest['outputs'].values():
            self.assertTrue(Path(path).exists(), path)

        run = Run.objects.get(command='splice')
        self.assertEqual((run.status, run.exit_code, run.seed), ('succeeded', 0, 3))
        self.assertEqual(run.artifacts.count(), 4)

    def test_missing_appearance_exits_with_io_code(self):
        missing = self.root / 'missing.png'
        error = self.assertFails(3, 'splice', str(self.structure), str(missing), '--out-dir',
                                 str(self.root / 'failed'), '--iterations', '1')
        self.assertIn(str(missing), str(error))
        self.assertEqual(self.manifest(self.root / 'failed')['exit_code'], 3)
        self.assertEqual(Run.objects.get(command='splice').status, 'failed')

    def test_unknown_config_key_exits_with_config_code(self):
        self.assertFails(2, 'splice', str(self.structure), str(self.appearance), '--out-dir',
                         str(self.root / 'badkey'), '--set', 'GAMMA=1')

    def test_images_too_small_for_the_generator(self):
        structure, appearance = fixture_pair(24)
        small = [str(save_image(structure, self.root / 'small-structure.png')),
                 str(save_image(appearance, self.root / 'small-appearance.png'))]
        error = self.assertFails(2, 'splice', *small, '--out-dir', str(self.root / 'small'), '--iterations', '1')
        self.assertIn('33px', str(error))
        self.assertEqual(self.manifest(self.root / 'small')['exit_code'], 2)

    def test_config_file(self):
        config_file = self.root / 'run.env'
        config_file.write_text('ITERATIONS=1\nALPHA=0.5\n')
        out_dir = self.root / 'from-file'
        self.call('splice', str(self.structure), str(self.appearance), '--out-dir', str(out_dir),
                  '--config', str(config_file))
        self.assertEqual(self.manifest(out_dir)['config']['weights']['alpha'], 0.5)


class DistillCommandTests(CommandTestCase):
    def test_pairs_written_verified_and_reproducible(self):
        first = self.root / 'pairs' / 'a.tsv'
        second = self.root / 'pairs' / 'b.tsv'
        self.call('distill', str(self.data), '--k', '3', '--window', '2', '--out', str(first))
        self.call('distill', str(self.data), '--k', '3', '--window', '2', '--out', str(second))
        self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertTrue((self.root / 'pairs' / 'a_index' / 'descriptors.npy').is_file())
        meta = json.loads((self.root / 'pairs' / 'a.tsv.meta.json').read_text())
        self.assertEqual((meta['k'], meta['window'], meta['num_images']), (3, 2, 8))

    def test_k_too_large(self):
        self.assertFails(2, 'distill', str(self.data), '--k', '8', '--window', '2',
                         '--out', str(self.root / 'big.tsv'))

    def test_too_few_images(self):
        lonely = self.root / 'lonely'
        save_image(fixture_pair(32)[0], lonely / 'only.png')
        self.assertFails(2, 'distill', str(lonely), '--k', '1', '--window', '2',
                         '--out', str(self.root / 'lonely.tsv'))


class SpliceNetCommandTests(CommandTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.pairs = cls.root / 'pairs.tsv'
        cls.pairs.write_text('img0.png\timg1.png\nimg2.png\timg3.png\n')
        cls.train_dir = cls.root / 'train'
        call_command('splicenet_train', str(cls.pairs), str(cls.data), '--out-dir', str(cls.train_dir),
                     '--iterations', '2', *SMALL_MODEL, '--no-progress',
                     '--set', 'VIT_RESIZE=32', '--set', 'PERCEPTUAL=mse', '--set', 'CHECKPOINT_EVERY=1',
                     stdout=StringIO())
        cls.checkpoint = cls.train_dir / 'checkpoints' / 'splicenet_final.pt'

    def test_training_outputs(self):
        for name in ('splicenet_000001.pt', 'splicenet_000002.pt', 'splicenet_final.pt'):
            self.assertTrue((self.train_dir / 'checkpoints' / name).is_file())
        with open(self.train_dir / 'losses.csv') as f:
            self.assertEqual([row['iteration'] for row in csv.DictReader(f)], ['1', '2'])

    def test_resume_continues_iterations(self):
        out_dir = self.root / 'resumed'
        self.call('splicenet_train', str(self.pairs), str(self.data), '--out-dir', str(out_dir),
                  '--iterations', '3', '--resume', str(self.train_dir / 'checkpoints' / 'splicenet_000002.pt'),
                  '--set', 'PERCEPTUAL=mse')
        with open(out_dir / 'losses.csv') as f:
            self.assertEqual([row['iteration'] for row in csv.DictReader(f)], ['3'])
        self.assertEqual(self.manifest(out_dir)['metrics']['start_iteration'], 2)

    def test_empty_and_malformed_pair_files(self):
        empty = self.root / 'empty.tsv'
        empty.write_text('# nothing\n')
        self.assertFails(2, 'splicenet_train', str(empty), str(self.data), '--out-dir', str(self.root / 'e'),
                         '--iterations', '1', *SMALL_MODEL)
        malformed = self.root / 'malformed.tsv'
        malformed.write_text('img0.png\timg1.png\nimg2.png img3.png\n')
        error = self.assertFails(2, 'splicenet_train', str(malformed), str(self.data), '--out-dir',
                                 str(self.root / 'm'), '--iterations', '1', *SMALL_MODEL)
        self.assertIn('line 2', str(error))

    def test_run_with_appearance_image(self):
        out = self.root / 'run' / 'out.png'
        output = self.call('splicenet_run', str(self.checkpoint), str(self.structure),
                           '--appearance', str(self.appearance), '--out', str(out))
        self.assertIn('inference time', output)
        self.assertEqual(load_image(out).shape, (3, 64, 64))
        self.assertGreater(self.manifest(out.parent)['metrics']['inference_seconds'], 0.0)

    def test_run_with_token_matrix(self):
        tokens = self.root / 'tokens.npy'
        np.save(tokens, np.random.default_rng(0).normal(size=(3, 32)).astype(np.float32))
        out = self.root / 'token-run' / 'out.png'
        self.call('splicenet_run', str(self.checkpoint), str(self.structure), '--token-file', str(tokens),
                  '--token-index', '2', '--out', str(out))
        self.assertTrue(out.is_file())
        self.assertFails(2, 'splicenet_run', str(self.checkpoint), str(self.structure), '--token-file',
                         str(tokens), '--out', str(out))

    def test_run_rejects_mismatched_checkpoint(self):
        foreign = save_checkpoint(self.root / 'foreign.pt', build_splicenet(
            SpliceNetConfig(stem_channels=8, encoder_channels=(8, 16), cls_dim=16, mapping_hidden=16)))
        self.assertFails(2, 'splicenet_run', str(foreign), str(self.structure), '--appearance',
                         str(self.appearance), '--out', str(self.root / 'foreign' / 'out.png'))

    def test_modes_with_grid(self):
        out_dir = self.root / 'modes'
        self.call('modes', str(self.data), '--k', '2', '--out-dir', str(out_dir),
                  '--checkpoint', str(self.checkpoint), '--samples', '2')
        self.assertEqual(np.load(out_dir / 'modes.npy').shape, (2, 32))
        self.assertEqual(len(json.loads((out_dir / 'modes.json').read_text())['assignments']), 8)
        self.assertEqual(load_image(out_dir / 'mode_grid.png').shape, (3, 2 * 34 + 2, 3 * 34 + 2))

    def test_interpolate(self):
        out_dir = self.root / 'interpolate'
        self.call('interpolate', str(self.checkpoint), str(self.structure), str(self.appearance),
                  '--out-dir', str(out_dir))
        with open(out_dir / 'interpolation.csv') as f:
            rows = list(csv.DictReader(f))
        self.assertEqual([float(r['alpha']) for r in rows], [0.0, 0.25, 0.5, 0.75, 1.0])
        self.assertTrue((out_dir / 'interpolation.png').is_file())
        self.assertFails(2, 'interpolate', str(self.checkpoint), str(self.structure), str(self.appearance),
                         '--out-dir', str(out_dir), '--alphas', 'a,b')

    def test_eval_reconstruction(self):
        report = self.root / 'eval' / 'recon.csv'
        self.call('eval_recon', str(self.checkpoint), str(self.data), '--out', str(report), '--backend', 'mse',
                  '--image-size', '32')
        with open(report) as f:
            rows = list(csv.DictReader(f))
        self.assertEqual([r['image'] for r in rows], [f'img{i}.png' for i in range(8)] + ['mean'])
        mse = [float(r['mse']) for r in rows[:-1]]
        self.assertTrue(all(value > 0 for value in mse))
        self.assertAlmostEqual(float(rows[-1]['mse']), sum(mse) / len(mse), places=6)

    def test_eval_reconstruction_empty_dir(self):
        empty = self.root / 'no-images'
        empty.mkdir(exist_ok=True)
        self.assertFails(2, 'eval_recon', str(self.checkpoint), str(empty), '--out',
                         str(self.root / 'none.csv'), '--backend', 'mse')


class InvertCommandTests(CommandTestCase):
    def test_single_feature(self):
        out_dir = self.root / 'invert'
        self.call('invert', str(self.appearance), '--out-dir', str(out_dir), '--feature', 'keys@2',
                  '--steps', '2', '--output-size', '32')
        self.assertTrue((out_dir / 'inversion.png').is_file())
        with open(out_dir / 'trace.csv') as f:
            self.assertEqual(len(list(csv.DictReader(f))), 3)

    def test_layers_with_a_failure_still_write_outputs(self):
        out_dir = self.root / 'invert-layers'
        self.assertFails(2, 'invert', str(self.appearance), '--out-dir', str(out_dir), '--layers', '1,2,7',
                         '--steps', '1', '--output-size', '32')
        self.assertTrue((out_dir / 'inversion.png').is_file())
        self.assertEqual(self.manifest(out_dir)['metrics']['failed_layers'], [7])


class PcaCommandTests(CommandTestCase):
    def test_component_maps_beside_the_image(self):
        out_dir = self.root / 'pca'
        self.call('pca', str(self.appearance), '--out-dir', str(out_dir), '--layer', '2')
        self.assertEqual(load_image(out_dir / 'pca.png').shape, (3, 36, 138))
        maps = np.load(out_dir / 'pca.npy')
        self.assertEqual(maps.shape, (3, 4, 4))
        self.assertGreaterEqual(maps.min(), 0.0)
        self.assertLessEqual(maps.max(), 1.0)

        manifest = self.manifest(out_dir)
        self.assertEqual(manifest['config']['layer'], 2)
        ratios = manifest['metrics']['explained_variance_ratio']
        self.assertEqual(len(ratios), 3)
        self.assertEqual(ratios, sorted(ratios, reverse=True))
        self.assertEqual(set(manifest['outputs']), {'grid', 'maps'})

    def test_more_components_than_tokens(self):
        self.assertFails(2, 'pca', str(self.appearance), '--out-dir', str(self.root / 'pca-rank'),
                         '--components', '20')
