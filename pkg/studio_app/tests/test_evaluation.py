# anchorcast/studio_app/tests/test_evaluation.py
import json
import os
import tempfile
import numpy as np
import pandas as pd
from django.test import SimpleTestCase
from anchorcast_core.data_manager import write_frame_dir, write_mask, frame_name
from anchorcast_core.evaluation import (IDENTICAL, ssim, psnr, frechet_distance, apply_mask, evaluate_run,
                                        ToyProjectionExtractor, REPORT_FILE, PER_FRAME_FILE)
from anchorcast_core.exceptions import InputValidationError, MetricError


def random_frames(count, size=16, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, 256, (size, size, 3), dtype=np.uint8) for _ in range(count)]


class SsimTests(SimpleTestCase):
    def test_identity_is_exactly_one(self):
        for frame in random_frames(3, size=24):
            self.assertEqual(ssim(frame, frame), 1.0)

    def test_inverted_checkerboard_is_negative(self):
        board = (np.indices((32, 32)).sum(axis=0) % 2 * 255).astype(np.uint8)
        self.assertLess(ssim(board, 255 - board), 0.0)

    def test_constant_images_reduce_to_the_luminance_term(self):
        a = np.full((16, 16), 100, dtype=np.uint8)
        b = np.full((16, 16), 150, dtype=np.uint8)
        c1 = (0.01 * 255) ** 2
        expected = (2 * 100 * 150 + c1) / (100 ** 2 + 150 ** 2 + c1)
        self.assertAlmostEqual(ssim(a, b), expected, delta=1e-6)

    def test_symmetric(self):
        a, b = random_frames(2, size=20, seed=3)
        self.assertEqual(ssim(a, b), ssim(b, a))

    def test_small_and_mismatched_images_are_rejected(self):
        with self.assertRaises(MetricError):
            ssim(np.zeros((10, 10)), np.zeros((10, 10)))
        with self.assertRaises(MetricError):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))


class PsnrTests(SimpleTestCase):
    def test_identical_images_give_the_sentinel(self):
        frame = random_frames(1)[0]
        self.assertEqual(psnr(frame, frame.copy()), IDENTICAL)

    def test_full_scale_error_is_zero_db(self):
        self.assertAlmostEqual(psnr(np.zeros((4, 4)), np.full((4, 4), 255)), 0.0, places=12)

    def test_uniform_offset_example(self):
        self.assertAlmostEqual(psnr(np.zeros((8, 8, 3)), np.full((8, 8, 3), 16)), 24.05, delta=0.01)

    def test_larger_error_lowers_psnr(self):
        base = np.zeros((8, 8))
        values = [psnr(base, np.full((8, 8), d)) for d in (1, 4, 16, 64)]
        self.assertEqual(values, sorted(values, reverse=True))


class FrechetTests(SimpleTestCase):
    def test_shifted_sets(self):
        self.assertAlmostEqual(frechet_distance([-1, 0, 1], [2, 3, 4]), 9.0, delta=1e-9)

    def test_scaled_sets(self):
        self.assertAlmostEqual(frechet_distance([-1, 0, 1], [-2, 0, 2]), 1.0, delta=1e-9)

    def test_same_set_is_zero(self):
        feats = np.random.default_rng(0).normal(size=(50, 4))
        value = frechet_distance(feats, feats)
        self.assertGreaterEqual(value, 0.0)
        self.assertLessEqual(value, 1e-8)

    def test_same_set_with_a_low_variance_direction_is_zero(self):
        rng = np.random.default_rng(2)
        feats = rng.normal(size=(50, 2)) * np.array([3e-4, 0.9])
        angle = np.pi / 6
        rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        feats = feats @ rotation
        self.assertLess(np.linalg.eigvalsh(np.cov(feats, rowvar=False)).min(), 1e-6)
        value = frechet_distance(feats, feats)
        self.assertGreaterEqual(value, 0.0)
        self.assertLessEqual(value, 1e-8)

    def test_rank_deficient_sets_still_give_a_value(self):
        feats = np.random.default_rng(1).normal(size=(3, 8))
        self.assertGreaterEqual(frechet_distance(feats, feats + 1.0), 0.0)

    def test_errors(self):
        with self.assertRaises(MetricError):
            frechet_distance(np.zeros((4, 2)), np.zeros((4, 3)))
        with self.assertRaises(MetricError):
            frechet_distance(np.zeros((1, 2)), np.zeros((4, 2)))


class MaskTests(SimpleTestCase):
    def setUp(self):
        self.frames = random_frames(2)

    def test_all_ones_changes_nothing(self):
        masked = apply_mask(self.frames, [np.ones((16, 16), dtype=np.uint8)] * 2)
        for a, b in zip(masked, self.frames):
            np.testing.assert_array_equal(a, b)

    def test_all_zeros_makes_any_pair_identical(self):
        zeros = [np.zeros((16, 16), dtype=np.uint8)] * 2
        a = apply_mask(self.frames, zeros)
        b = apply_mask(random_frames(2, seed=9), zeros)
        self.assertEqual(psnr(a[0], b[0]), IDENTICAL)
        self.assertEqual(ssim(a[0], b[0]), 1.0)

    def test_half_mask_zeroes_only_the_background(self):
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[:, :8] = 1
        masked = apply_mask(self.frames[:1], [mask])[0]
        np.testing.assert_array_equal(masked[:, :8], self.frames[0][:, :8])
        self.assertFalse(masked[:, 8:].any())
        np.testing.assert_array_equal(apply_mask([masked], [mask])[0], masked)

    def test_bad_masks(self):
        with self.assertRaises(MetricError):
            apply_mask(self.frames, [np.ones((16, 16))])
        with self.assertRaises(MetricError):
            apply_mask(self.frames[:1], [np.ones((8, 8))])
        with self.assertRaises(MetricError):
            apply_mask(self.frames[:1], [np.full((16, 16), 255)])


class ExtractorTests(SimpleTestCase):
    def test_seeded_and_described(self):
        frames = random_frames(3)
        a = ToyProjectionExtractor(seed=4).extract(frames)
        b = ToyProjectionExtractor(seed=4).extract(frames)
        np.testing.assert_array_equal(a, b)
        self.assertEqual(a.shape, (3, 16))
        self.assertEqual(ToyProjectionExtractor().describe()['name'], 'toy-random-projection')


class EvaluateRunTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def dir_with(self, name, frames):
        path = os.path.join(self.tmp.name, name)
        write_frame_dir(path, frames)
        return path

    def test_self_comparison(self):
        frames = random_frames(4)
        out = os.path.join(self.tmp.name, 'report')
        report = evaluate_run(self.dir_with('gen', frames), self.dir_with('ref', frames), output_dir=out)
        self.assertEqual(report.ssim_mean, 1.0)
        self.assertEqual(report.psnr_mean, IDENTICAL)
        self.assertLessEqual(report.frechet, 1e-8)

        with open(os.path.join(out, REPORT_FILE)) as f:
            data = json.load(f)
        self.assertEqual(data['frame_count'], 4)
        self.assertEqual(data['aggregate']['psnr_mean'], IDENTICAL)
        self.assertIsNone(data['lpips'])
        self.assertIn('toy', data['provenance'])
        self.assertEqual(data['extractor']['name'], 'toy-random-projection')
        table = pd.read_parquet(os.path.join(out, PER_FRAME_FILE))
        self.assertEqual(list(table.columns), ['frame', 'ssim', 'psnr', 'identical'])
        self.assertTrue(table['identical'].all())
        self.assertEqual(table['frame'].tolist(), [frame_name(i) for i in range(4)])

    def test_shuffling_generated_frames_changes_pairs_but_not_the_set_distance(self):
        ref = random_frames(5, seed=2)
        rng = np.random.default_rng(1)
        gen = [np.clip(r.astype(np.int16) + rng.integers(-8, 9, r.shape), 0, 255).astype(np.uint8) for r in ref]
        order = [3, 0, 4, 1, 2]
        ref_dir = self.dir_with('r', ref)
        a = evaluate_run(self.dir_with('g1', gen), ref_dir)
        b = evaluate_run(self.dir_with('g2', [gen[i] for i in order]), ref_dir)
        self.assertNotEqual(a.per_frame_ssim, b.per_frame_ssim)
        self.assertLess(b.ssim_mean, a.ssim_mean)
        self.assertAlmostEqual(a.frechet, b.frechet, delta=1e-9 * max(1.0, a.frechet))

    def test_count_mismatch_is_rejected(self):
        with self.assertRaises(InputValidationError):
            evaluate_run(self.dir_with('g', random_frames(3)), self.dir_with('r', random_frames(2)))

    def test_masked_run_and_parallel_metrics(self):
        gen, ref = random_frames(3, seed=5), random_frames(3, seed=6)
        masks_dir = os.path.join(self.tmp.name, 'masks')
        os.makedirs(masks_dir)
        for i in range(3):
            write_mask(os.path.join(masks_dir, frame_name(i)), np.zeros((16, 16), dtype=np.uint8))
        report = evaluate_run(self.dir_with('g', gen), self.dir_with('r', ref), masks_dir=masks_dir, n_jobs=2)
        self.assertTrue(report.masked)
        self.assertEqual(report.per_frame_psnr, [IDENTICAL] * 3)
