import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from training.config import (SPLICE_PRESET, SPLICENET_PRESET, AugmentPolicy, TrainConfig, config_snapshot,
                             load_train_config, merge_config)
from utils.errors import ConfigError, SpliceIOError, VitConfigError


class PresetTests(SimpleTestCase):
    def test_splice_preset(self):
        self.assertEqual((SPLICE_PRESET.weights.alpha, SPLICE_PRESET.weights.beta), (0.1, 0.1))
        self.assertEqual(SPLICE_PRESET.iterations, 2000)
        self.assertEqual(SPLICE_PRESET.augment.crop_range, (0.95, 1.0))
        self.assertEqual((SPLICE_PRESET.augment.jitter_p, SPLICE_PRESET.augment.blur_p), (0.5, 0.5))

    def test_splicenet_preset(self):
        self.assertEqual((SPLICENET_PRESET.weights.alpha, SPLICENET_PRESET.weights.beta), (2.0, 0.1))
        self.assertEqual(SPLICENET_PRESET.augment.crop_range, (0.95, 0.95))
        self.assertEqual((SPLICENET_PRESET.augment.jitter_p, SPLICENET_PRESET.augment.blur_p), (0.2, 0.1))
        self.assertEqual(SPLICENET_PRESET.perceptual, 'lpips')

    def test_validation(self):
        with self.assertRaises(ConfigError):
            TrainConfig(lr=0)
        with self.assertRaises(ConfigError):
            TrainConfig(vit_resize=100)
        with self.assertRaises(ConfigError):
            AugmentPolicy(crop_range=(0.9, 0.8))
        with self.assertRaises(ConfigError):
            AugmentPolicy(blur_kernel=4)


class ConfigFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'run.env'

    def tearDown(self):
        self.tmp.cleanup()

    def test_file_values_and_precedence(self):
        self.path.write_text('# toy run\nITERATIONS=200\nalpha=0.5\nAUGMENT_CROP_RANGE=0.9,1.0\nLR=0.001\n')
        config = load_train_config(self.path, overrides={'LR': '0.01'}, defaults={'ITERATIONS': '10', 'BETA': '0.3'})
        self.assertEqual(config.iterations, 200)
        self.assertEqual(config.weights.alpha, 0.5)
        self.assertEqual(config.weights.beta, 0.3)
        self.assertEqual(config.augment.crop_range, (0.9, 1.0))
        self.assertEqual(config.lr, 0.01)

    def test_vit_keys(self):
        config = merge_config(SPLICE_PRESET, {'VIT_PATCH_SIZE': '16', 'VIT_WEIGHTS_SOURCE': '/tmp/w.pt',
                                              'VIT_RESIZE': '224'})
        self.assertEqual(config.vit.patch_size, 16)
        self.assertEqual(config.vit.weights_source, '/tmp/w.pt')

    def test_empty_defaults_are_ignored(self):
        config = load_train_config(defaults={'VIT_PATCH_SIZE': '', 'VIT_WEIGHTS_SOURCE': 'x/y'})
        self.assertEqual(config.vit.patch_size, 8)
        self.assertEqual(config.vit.weights_source, 'x/y')

    def test_errors(self):
        with self.assertRaises(ConfigError):
            merge_config(SPLICE_PRESET, {'GAMMA': '1'})
        with self.assertRaises(ConfigError):
            merge_config(SPLICE_PRESET, {'ITERATIONS': 'many'})
        with self.assertRaises(ConfigError):
            merge_config(SPLICE_PRESET, {'AUGMENT_CROP_RANGE': '0.9'})
        with self.assertRaises(VitConfigError):
            merge_config(SPLICE_PRESET, {'VIT_TOKEN_DIM': '100'})
        with self.assertRaises(ConfigError):
            load_train_config(preset='gan')
        with self.assertRaises(SpliceIOError):
            load_train_config(Path(self.tmp.name) / 'absent.env')

    def test_snapshot_is_plain_data(self):
        snapshot = config_snapshot(load_train_config(preset='splicenet'))
        self.assertEqual(snapshot['weights'], {'alpha': 2.0, 'beta': 0.1})
        self.assertEqual(snapshot['vit']['patch_size'], 8)
