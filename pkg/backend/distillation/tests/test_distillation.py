import tempfile
from pathlib import Path

import numpy as np
import torchvision.transforms.functional as TF
from django.test import SimpleTestCase

from distillation.descriptor_index import DescriptorIndex, compute_descriptors, knn, knn_table
from distillation.pairing import PairSet, meta_path, mutual_knn_pairs, verify_pairs
from extractor.vit_backend import load_vit
from utils.errors import ConfigError, GridError, PairFileError, SpliceIOError, UnknownImageError
from utils.fixtures import make_image, synthetic_collection, write_tiny_vit
from utils.image_io import save_image


def random_index(count=50, dim=12, seed=0, metric='cosine'):
    rng = np.random.default_rng(seed)
    ids = [f'img{i:03d}' for i in range(count)]
    return DescriptorIndex(image_ids=ids, descriptors=rng.normal(size=(count, dim)).astype(np.float32),
                           metric=metric)


def oracle_similarity(a, b, metric):
    a, b = a.astype(np.float64), b.astype(np.float64)
    if metric == 'cosine':
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return -float(np.sqrt(((a - b) ** 2).sum()))


def oracle_knn(index, query, k):
    q = index.position(query)
    scored = [
        (-oracle_similarity(index.descriptors[q], index.descriptors[j], index.metric), index.image_ids[j])
        for j in range(len(index)) if j != q
    ]
    return [image_id for _, image_id in sorted(scored)[:k]]


class KnnTests(SimpleTestCase):
    def test_matches_full_scan_oracle(self):
        for metric in ('cosine', 'frobenius'):
            index = random_index(metric=metric)
            for query in index.image_ids[::7]:
                self.assertEqual(knn(index, query, 5), oracle_knn(index, query, 5))

    def test_exhaustive_k(self):
        index = random_index(count=6)
        self.assertEqual(sorted(knn(index, 'img002', 5)), [i for i in index.image_ids if i != 'img002'])

    def test_planted_duplicate_ranks_first(self):
        index = random_index(count=20)
        descriptors = index.descriptors.copy()
        descriptors[13] = descriptors[4] * 1.01 + 0.001
        index = DescriptorIndex(index.image_ids, descriptors)
        self.assertEqual(knn(index, 'img004', 3)[0], 'img013')

    def test_ties_break_by_id(self):
        descriptors = np.array([[1, 0], [0, 1], [0, 1], [0, 1]], dtype=np.float32)
        index = DescriptorIndex(['a', 'b', 'c', 'd'], descriptors)
        self.assertEqual(knn(index, 'a', 2), ['b', 'c'])
        self.assertEqual(knn(index, 'c', 2), ['b', 'd'])

    def test_table_agrees_with_queries(self):
        index = random_index()
        table = knn_table(index, 4)
        for position, query in enumerate(index.image_ids):
            self.assertEqual([index.image_ids[p] for p in table[position]], knn(index, query, 4))

    def test_errors(self):
        index = random_index(count=5)
        with self.assertRaises(ConfigError):
            knn(index, 'img000', 5)
        with self.assertRaises(ConfigError):
            knn(index, 'img000', 0)
        with self.assertRaises(UnknownImageError):
            knn(index, 'missing', 2)
        with self.assertRaises(ConfigError):
            DescriptorIndex(['a', 'a'], np.zeros((2, 3)))
        with self.assertRaises(ConfigError):
            DescriptorIndex(['a'], np.zeros((1, 3)), metric='l1')


class MutualPairTests(SimpleTestCase):
    def test_matches_predicate_oracle(self):
        index = random_index()
        k = 6
        neighbours = {q: set(oracle_knn(index, q, k)) for q in index.image_ids}
        expected = [
            (a, b) for i, a in enumerate(index.image_ids) for b in index.image_ids[i + 1:]
            if b in neighbours[a] and a in neighbours[b]
        ]
        self.assertEqual(mutual_knn_pairs(index, k).pairs, expected)

    def test_identical_images_always_paired(self):
        index = random_index(count=10)
        descriptors = index.descriptors.copy()
        descriptors[7] = descriptors[2]
        index = DescriptorIndex(index.image_ids, descriptors)
        for k in range(1, 10):
            self.assertIn(('img002', 'img007'), mutual_knn_pairs(index, k).pairs)

    def test_planted_outlier_excluded(self):
        rng = np.random.default_rng(1)
        base = np.ones(8)
        cluster = base + 0.05 * rng.normal(size=(5, 8))
        outlier = -base + 0.05 * rng.normal(size=8)
        index = DescriptorIndex([f'c{i}' for i in range(5)] + ['outlier'],
                                np.vstack([cluster, outlier]).astype(np.float32))
        pairs = mutual_knn_pairs(index, 2)
        self.assertTrue(pairs.pairs)
        self.assertNotIn('outlier', pairs.image_ids())

    def test_monotone_in_k_and_verified(self):
        index = random_index()
        previous = set()
        for k in range(1, 12):
            pairs = mutual_knn_pairs(index, k)
            self.assertTrue(previous <= set(pairs.pairs))
            self.assertEqual(verify_pairs(index, pairs), [])
            previous = set(pairs.pairs)

    def test_verify_reports_non_mutual_pairs(self):
        index = random_index(count=10)
        far = knn(index, 'img000', 9)[-1]
        self.assertEqual(verify_pairs(index, PairSet([('img000', far)]), k=1), [('img000', far)])

    def test_training_pairs_in_both_orders(self):
        self.assertEqual(PairSet([('a', 'b')]).training_pairs(), [('a', 'b'), ('b', 'a')])


class PairFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_saved_file_reloads_with_metadata(self):
        index = random_index(count=20)
        pairs = mutual_knn_pairs(index, 3)
        path = pairs.save(self.root / 'pairs.tsv')
        self.assertTrue(meta_path(path).is_file())
        loaded = PairSet.load(path)
        self.assertEqual(loaded.pairs, pairs.pairs)
        self.assertEqual(loaded.provenance['k'], 3)

    def test_reruns_are_byte_identical(self):
        index = random_index()
        first = mutual_knn_pairs(index, 5).save(self.root / 'a.tsv').read_bytes()
        second = mutual_knn_pairs(index, 5).save(self.root / 'b.tsv').read_bytes()
        self.assertEqual(first, second)

    def test_malformed_lines_name_line_number(self):
        path = self.root / 'pairs.tsv'
        path.write_text('# comment\na\tb\n\nc d\n')
        with self.assertRaises(PairFileError) as ctx:
            PairSet.load(path)
        self.assertEqual(ctx.exception.line_number, 4)
        path.write_text('a\tb\nc\tc\n')
        with self.assertRaises(PairFileError) as ctx:
            PairSet.load(path)
        self.assertEqual(ctx.exception.line_number, 2)

    def test_missing_file(self):
        with self.assertRaises(SpliceIOError):
            PairSet.load(self.root / 'absent.tsv')

    def test_index_save_load(self):
        index = random_index(count=8)
        loaded = DescriptorIndex.load(index.save(self.root / 'index'))
        self.assertEqual(loaded.image_ids, index.image_ids)
        self.assertTrue(np.array_equal(loaded.descriptors, index.descriptors))
        with self.assertRaises(SpliceIOError):
            DescriptorIndex.load(self.root / 'nothing')


class DescriptorTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.extractor = load_vit(write_tiny_vit(cls.root / 'vit.pt', seed=2))

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_paths_and_tensors(self):
        images = {}
        for i, image in enumerate(synthetic_collection(4, size=40, seed=1)):
            images[f'{i}.png'] = save_image(image, self.root / 'set' / f'{i}.png')
        (self.root / 'set' / 'broken.png').write_bytes(b'garbage')
        images['broken.png'] = self.root / 'set' / 'broken.png'
        images['tensor'] = make_image(48)

        index = compute_descriptors(images, self.extractor, window=2, vit_resize=32)
        self.assertEqual(index.image_ids, ['0.png', '1.png', '2.png', '3.png', 'tensor'])
        self.assertEqual(index.descriptors.shape, (5, 16))
        self.assertEqual(index.provenance['skipped'], ['broken.png'])
        self.assertEqual(len(index.provenance['dataset_hash']), 64)

    def test_duplicates_share_descriptor(self):
        image = make_image(32, texture_freq=3)
        other = make_image(32, (0.2, 0.75, 0.15), (0.1, 0.9, 0.1), (0.9, 0.9, 0.9))
        index = compute_descriptors({'a': image, 'b': image.clone(), 'c': other}, self.extractor,
                                    window=2, vit_resize=32)
        self.assertTrue(np.array_equal(index.descriptors[0], index.descriptors[1]))
        self.assertEqual(knn(index, 'a', 1), ['b'])

    def test_photometric_change_moves_descriptor_less_than_new_layout(self):
        image = make_image(64, (0.35, 0.4, 0.25))
        jittered = TF.adjust_brightness(image, 1.05)
        other = make_image(64, (0.75, 0.7, 0.15), texture_freq=5)
        index = compute_descriptors({'a': image, 'b': jittered, 'c': other}, self.extractor,
                                    window=2, vit_resize=64)
        row = index.similarity_row(0)
        self.assertGreater(row[1], row[2])

    def test_window_must_divide_grid(self):
        with self.assertRaises(GridError):
            compute_descriptors({'a': make_image(32)}, self.extractor, window=3, vit_resize=32)
