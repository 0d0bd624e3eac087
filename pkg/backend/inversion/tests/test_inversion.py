import tempfile
from pathlib import Path

import unittest

import torch
import torch.nn.functional as F
from django.conf import settings
from django.test import SimpleTestCase, tag

from extractor.vit_backend import VitConfig, get_extractor, load_vit
from inversion.invert import (InversionConfig, build_prior, invert_cls_across_layers, invert_feature,
                              parse_selector, render_inversion_grid)
from training.augment import resize_square
from training.losses import structure_loss
from utils.errors import ConfigError, InversionDiverged, MissingLayerError, NumericalAbort, ShapeError
from utils.fixtures import fixture_pair, write_tiny_vit
from utils.image_io import load_image


class SelectorTests(SimpleTestCase):
    def test_parse(self):
        self.assertEqual(parse_selector('keys@3', 12), ('keys', 3))
        self.assertEqual(parse_selector('cls@L', 12), ('cls', 12))
        self.assertEqual(parse_selector('selfsim@last', 4), ('selfsim', 4))

    def test_invalid(self):
        with self.assertRaises(MissingLayerError):
            parse_selector('cls@13', 12)
        with self.assertRaises(ConfigError):
            parse_selector('tokens@3', 12)
        with self.assertRaises(ConfigError):
            parse_selector('cls@three', 12)
        with self.assertRaises(ConfigError):
            InversionConfig(feature_selector='cls')
        with self.assertRaises(ConfigError):
            InversionConfig(lr=0)
        with self.assertRaises(ConfigError):
            InversionConfig(parameterization='fourier')

    def test_prior_is_seeded(self):
        a, noise_a = build_prior(InversionConfig(output_size=32, prior_seed=1))
        b, noise_b = build_prior(InversionConfig(output_size=32, prior_seed=1))
        self.assertTrue(torch.equal(noise_a, noise_b))
        self.assertEqual(noise_a.shape, (1, 32, 32, 32))
        self.assertTrue(torch.equal(a(noise_a), b(noise_b)))

    def test_prior_needs_room_for_every_level(self):
        with self.assertRaises(ShapeError) as ctx:
            build_prior(InversionConfig(output_size=16))
        self.assertEqual(ctx.exception.exit_code, 2)
        build_prior(InversionConfig(output_size=16, parameterization='pixels'))


class InversionTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.extractor = load_vit(write_tiny_vit(cls.root / 'vit.pt', seed=3))
        cls.target = fixture_pair(64)[1]

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def config(self, **changes):
        values = dict(feature_selector='cls@2', steps=20, lr=1e-2, output_size=32)
        values.update(changes)
        return InversionConfig(**values)

    def test_zero_steps_returns_initial_rendering(self):
        result = invert_feature(self.target, self.config(steps=0), self.extractor)
        self.assertEqual(len(result.trace), 1)
        self.assertEqual(result.image.shape, (3, 32, 32))

    def test_trace_and_range(self):
        for selector in ('cls@2', 'keys@2', 'selfsim@1'):
            result = invert_feature(self.target, self.config(feature_selector=selector), self.extractor)
            self.assertEqual(len(result.trace), 21)
            self.assertLess(result.final_loss, result.initial_loss)
            self.assertGreaterEqual(float(result.image.min()), 0.0)
            self.assertLessEqual(float(result.image.max()), 1.0)

    def test_pixel_parameterization_runs(self):
        result = invert_feature(self.target, self.config(parameterization='pixels', steps=5), self.extractor)
        self.assertEqual(result.image.shape, (3, 32, 32))

    def test_divergence_detected(self):
        with self.assertRaises(InversionDiverged) as ctx:
            invert_feature(self.target, self.config(divergence_factor=0.0, divergence_patience=3),
                           self.extractor)
        self.assertEqual(len(ctx.exception.trace), 3)
        self.assertEqual(ctx.exception.exit_code, 4)

    def test_non_finite_target_aborts(self):
        target = self.target.clone()
        target[0, 0, 0] = float('nan')
        with self.assertRaises(NumericalAbort):
            invert_feature(target, self.config(), self.extractor)

    def test_output_size_must_fit_patches(self):
        with self.assertRaises(ConfigError):
            invert_feature(self.target, self.config(output_size=30), self.extractor)

    def test_failing_layers_do_not_stop_the_rest(self):
        outcome = invert_cls_across_layers(self.target, [2, 1, 5], self.config(steps=3), self.extractor)
        self.assertEqual(sorted(outcome.results), [1, 2])
        self.assertIsInstance(outcome.failures[5], MissingLayerError)

        path = render_inversion_grid(outcome, self.root / 'grid.png', self.target)
        grid = load_image(path)
        self.assertEqual(grid.shape[-2], 32 + 4)
        self.assertEqual(grid.shape[-1], 3 * 32 + 4 * 2)

    @tag('slow')
    def test_cls_inversion_fidelity_and_seed_flexibility(self):
        images = []
        for seed in (0, 1):
            config = self.config(steps=500, lr=1e-3, prior_seed=seed)
            result = invert_feature(self.target, config, self.extractor)
            self.assertLessEqual(result.final_loss, 0.1 * result.initial_loss)
            images.append(result.image)
        self.assertFalse(torch.allclose(images[0], images[1], atol=1e-3))

    @tag('slow')
    def test_keys_reconstruct_pixels_better_than_cls(self):
        target = F.interpolate(self.target[None], size=(32, 32), mode='bicubic', align_corners=False,
                               antialias=True)[0].clamp(0, 1)
        errors = {}
        for selector in ('cls@2', 'keys@2'):
            result = invert_feature(self.target, self.config(feature_selector=selector, steps=500, lr=1e-3),
                                    self.extractor)
            errors[selector] = float(F.mse_loss(result.image, target))
        self.assertLess(errors['keys@2'], errors['cls@2'])


@tag('slow')
@unittest.skipUnless(settings.SPLICE_RUN_NETWORK_TESTS, 'needs the DINO ViT-B/8 weights download')
class DinoLayerInversionTests(SimpleTestCase):
    def test_deep_cls_keeps_less_structure_than_shallow(self):
        extractor = get_extractor(VitConfig())
        target = resize_square(fixture_pair(224)[0], 224)
        config = InversionConfig(steps=300, lr=1e-3, output_size=224)
        outcome = invert_cls_across_layers(target, [2, 12], config, extractor)
        self.assertEqual(outcome.failures, {})

        with torch.no_grad():
            reference = extractor.self_similarity(target)
            distance = {
                layer: float(structure_loss(extractor.self_similarity(result.image), reference))
                for layer, result in outcome.results.items()
            }
        self.assertGreater(distance[12], distance[2])
