import math
import unittest

import numpy as np

from app.errors import DimensionError
from app.metrics.engine import (
    PSNR_CAP_DB,
    psnr,
    region_psnr,
    selector_precision_recall,
    speedup_ratio,
    ssim,
)
from app.models.image import PixelImage
from app.models.report import RunReport, StepRecord
from app.models.routing import TokenRouting


def image(value: float, h: int = 16, w: int = 16, patch: int = 8) -> PixelImage:
    return PixelImage(data=np.full((h, w, 3), value), patch=patch)


def report(flops: list[int], wall: float = 0.0) -> RunReport:
    r = RunReport(label="x", mode="full", tokens=4, prompt_tokens=1, wall_clock_seconds=wall)
    for i, f in enumerate(flops):
        r.steps.append(
            StepRecord(step=i + 1, t=0.5, phase="baseline", active=4, reused=0,
                       forward_flops=f, attention_query_tokens=9)
        )
    return r


class TestPsnr(unittest.TestCase):
    def test_known_value_and_cap(self):
        self.assertAlmostEqual(psnr(image(0.0), image(0.1)), 20.0, places=9)
        self.assertEqual(psnr(image(0.3), image(0.3)), PSNR_CAP_DB)

    def test_half_difference_and_symmetry(self):
        self.assertAlmostEqual(psnr(image(0.0), image(0.5)), 10.0 * math.log10(4.0), places=9)
        rng = np.random.default_rng(1)
        a = PixelImage(data=rng.uniform(size=(8, 8, 3)), patch=8)
        b = PixelImage(data=rng.uniform(size=(8, 8, 3)), patch=8)
        self.assertEqual(psnr(a, b), psnr(b, a))
        self.assertEqual(ssim(a, b), ssim(b, a))

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            psnr(image(0.0), image(0.0, h=8))

    def test_region_ignores_edited_tokens(self):
        a = image(0.5)
        data = a.data.copy()
        data[0:8, 0:8] = 0.0
        b = PixelImage(data=data, patch=8)
        edited = np.array([[True, False], [False, False]])
        self.assertEqual(region_psnr(a, b, edited), PSNR_CAP_DB)
        self.assertLess(region_psnr(a, b, ~edited), PSNR_CAP_DB)
        self.assertEqual(region_psnr(a, b, np.ones((2, 2), dtype=bool)), PSNR_CAP_DB)


class TestSsim(unittest.TestCase):
    def test_identical_and_different(self):
        rng = np.random.default_rng(0)
        a = PixelImage(data=rng.uniform(size=(16, 16, 3)), patch=8)
        b = PixelImage(data=rng.uniform(size=(16, 16, 3)), patch=8)
        self.assertAlmostEqual(ssim(a, a), 1.0, places=12)
        self.assertLess(ssim(a, b), 0.5)

    def test_negative_image_is_anticorrelated(self):
        rng = np.random.default_rng(2)
        a = PixelImage(data=rng.uniform(size=(16, 16, 3)), patch=8)
        self.assertLess(ssim(a, PixelImage(data=1.0 - a.data, patch=8)), 0.0)

    def test_constant_images_closed_form(self):
        got = ssim(image(0.3, h=8, w=8), image(0.4, h=8, w=8))
        want = (2 * 0.3 * 0.4 + 1e-4) / (0.3 ** 2 + 0.4 ** 2 + 1e-4)
        self.assertAlmostEqual(got, want, delta=1e-9)

    def test_window_must_tile(self):
        with self.assertRaises(DimensionError):
            ssim(image(0.1, h=12), image(0.1, h=12))


class TestSpeedup(unittest.TestCase):
    def test_ratio_and_infinite(self):
        self.assertEqual(speedup_ratio(report([7, 9]), report([7, 9])).flop_ratio, 1.0)
        res = speedup_ratio(report([100] * 50, wall=2.0), report([100] * 4, wall=0.5))
        self.assertEqual(res.flop_ratio, 12.5)
        self.assertEqual(res.wall_clock_ratio, 4.0)
        self.assertFalse(res.infinite)
        inf = speedup_ratio(report([100]), report([0]))
        self.assertTrue(inf.infinite)
        self.assertTrue(math.isinf(inf.flop_ratio))
        self.assertIsNone(inf.wall_clock_ratio)


class TestPrecisionRecall(unittest.TestCase):
    def test_partial_overlap(self):
        edited = np.array([[True, True], [False, False]])
        routing = TokenRouting.from_active([1, 2], 4)
        self.assertEqual(selector_precision_recall(routing, edited), (0.5, 0.5))

    def test_empty_sets(self):
        routing = TokenRouting.from_active([], 4)
        self.assertEqual(selector_precision_recall(routing, np.zeros((2, 2), dtype=bool)), (1.0, 1.0))


if __name__ == "__main__":
    unittest.main()
