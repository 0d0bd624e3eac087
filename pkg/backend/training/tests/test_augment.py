import torch
import torchvision.transforms.functional as TF
from django.test import SimpleTestCase

from training.augment import (augment_pair, chance, random_square_crop, resize_for_vit, resize_square,
                              smallest_crop_side)
from training.config import AugmentPolicy
from utils.errors import ShapeError
from utils.fixtures import fixture_pair, make_image


class ResizeTests(SimpleTestCase):
    def test_resize_keeps_aspect_on_patch_grid(self):
        self.assertEqual(resize_for_vit(make_image(512), 224, 8).shape, (3, 224, 224))
        self.assertEqual(resize_for_vit(make_image(300, width=450), 224, 8).shape, (3, 224, 336))
        self.assertEqual(resize_for_vit(make_image(100, width=130), 32, 8).shape, (3, 32, 40))

    def test_exact_size_passes_through(self):
        image = make_image(32, width=48)
        self.assertIs(resize_for_vit(image, 32, 8), image)
        self.assertEqual(resize_square(image, 32).shape, (3, 32, 32))

    def test_smaller_than_patch(self):
        with self.assertRaises(ShapeError):
            resize_for_vit(torch.rand(3, 4, 40), 32, 8)

    def test_resize_is_differentiable(self):
        image = make_image(64).requires_grad_(True)
        resize_for_vit(image, 32, 8).sum().backward()
        self.assertIsNotNone(image.grad)


class AugmentTests(SimpleTestCase):
    def test_crop_is_square_within_range(self):
        rng = torch.Generator().manual_seed(0)
        for _ in range(20):
            crop = random_square_crop(make_image(100, width=160), (0.5, 0.9), rng)
            self.assertEqual(crop.shape[-1], crop.shape[-2])
            self.assertTrue(50 <= crop.shape[-1] <= 90)

    def test_full_crop_keeps_frame(self):
        image = make_image(40, width=60)
        self.assertIs(random_square_crop(image, (1.0, 1.0), torch.Generator().manual_seed(0)), image)

    def test_disabled_policy_is_identity(self):
        structure, appearance = fixture_pair(64)
        out_s, out_a = augment_pair(structure, appearance, AugmentPolicy.disabled(),
                                    torch.Generator().manual_seed(0))
        self.assertTrue(torch.equal(out_s, structure))
        self.assertTrue(torch.equal(out_a, appearance))

    def test_seeded_and_in_range(self):
        structure, appearance = fixture_pair(64)
        policy = AugmentPolicy(hflip_p=1.0, jitter_p=1.0, blur_p=1.0)
        first = augment_pair(structure, appearance, policy, torch.Generator().manual_seed(5))
        second = augment_pair(structure, appearance, policy, torch.Generator().manual_seed(5))
        for a, b in zip(first, second):
            self.assertTrue(torch.equal(a, b))
            self.assertGreaterEqual(float(a.min()), 0.0)
            self.assertLessEqual(float(a.max()), 1.0)

    def test_draw_count_independent_of_probability(self):
        never, always = torch.Generator().manual_seed(1), torch.Generator().manual_seed(1)
        chance(0.0, never)
        chance(1.0, always)
        self.assertEqual(torch.rand(1, generator=never).item(), torch.rand(1, generator=always).item())

    def test_flip_frequency_matches_probability(self):
        structure = make_image(8, layout=(0.2, 0.5, 0.2))
        appearance = make_image(8)
        mirrored = TF.hflip(structure)
        policy = AugmentPolicy(crop_range=(1.0, 1.0), hflip_p=0.5, jitter_p=0.0, blur_p=0.0)
        rng = torch.Generator().manual_seed(11)
        flips = 0
        for _ in range(1000):
            out, _ = augment_pair(structure, appearance, policy, rng)
            if torch.equal(out, mirrored):
                flips += 1
            else:
                self.assertTrue(torch.equal(out, structure))
        self.assertTrue(450 <= flips <= 550, flips)

    def test_smallest_crop_side(self):
        self.assertEqual(smallest_crop_side(64, 64, (0.95, 1.0)), 61)
        self.assertEqual(smallest_crop_side(100, 40, (0.5, 0.9)), 40)
        self.assertEqual(smallest_crop_side(31, 31, (1.0, 1.0)), 31)
        rng = torch.Generator().manual_seed(0)
        for _ in range(20):
            crop = random_square_crop(make_image(64), (0.95, 1.0), rng)
            self.assertGreaterEqual(crop.shape[-1], 61)
