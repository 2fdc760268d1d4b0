from __future__ import annotations

import math
import unittest

import numpy as np

from tests._support import tiny_model
from utils import autodiff as ad
from utils.autodiff import Tensor
from utils.errors import UsageError
from utils.profiling import (
    AllocationMeter,
    cost_volume_bytes,
    linear_fit,
    measure_head_memory,
    random_frames,
    time_head,
    token_bytes,
)
from utils.warp_head import init_model_params


class AllocationMeterTests(unittest.TestCase):
    def test_counts_outputs_inside_scope_only(self) -> None:
        x = Tensor(np.ones(4), dtype=np.float32)
        with AllocationMeter() as meter:
            y = x * 2.0
            ad.tsum(y)
        _ = x + 1.0
        self.assertEqual(meter.count, 2)
        self.assertEqual(meter.total, 16 + 4)
        self.assertEqual((meter.largest, meter.largest_op), (16, "mul"))
        self.assertEqual(dict(meter.by_op), {"mul": 16, "sum": 4})


class FormulaTests(unittest.TestCase):
    def test_token_bytes(self) -> None:
        cfg = tiny_model()
        self.assertEqual(token_bytes(3, 16, cfg), 3 * 16 * (2 * 8 + 8 + 2) * 4)
        self.assertEqual(token_bytes(3, 16, cfg, itemsize=8), 2 * token_bytes(3, 16, cfg))

    def test_cost_volume_bytes(self) -> None:
        self.assertEqual(cost_volume_bytes(2, 10, 4), 2 * 10 * 81 * 4 * 4)
        self.assertEqual(cost_volume_bytes(2, 10, 3, levels=1, itemsize=8), 2 * 10 * 49 * 8)

    def test_linear_fit(self) -> None:
        slope, intercept, deviations = linear_fit([1, 2, 4], [3.0, 5.0, 9.0])
        self.assertAlmostEqual(slope, 2.0)
        self.assertAlmostEqual(intercept, 1.0)
        self.assertLess(max(deviations), 1e-9)
        with self.assertRaises(UsageError):
            linear_fit([1], [1.0])


class HeadMeasurementTests(unittest.TestCase):
    def test_memory_is_bounded_by_token_tensor(self) -> None:
        cfg = tiny_model()
        store = init_model_params(cfg, 0)
        for frames in (3, 5):
            with self.subTest(frames=frames):
                report = measure_head_memory(store, cfg, random_frames(frames, 16, 16), radius=4)
                self.assertEqual((report.frames, report.points), (frames, 16))
                self.assertEqual(report.token_bytes, token_bytes(frames, 16, cfg))
                self.assertGreaterEqual(report.largest_ratio, 1.0)
                self.assertLessEqual(report.largest_ratio, 2.0)
                self.assertGreater(report.cost_volume_bytes, report.token_bytes)
                self.assertIn("largest_ratio", report.to_dict())

    def test_timing_report_shape(self) -> None:
        cfg = tiny_model()
        report = time_head(init_model_params(cfg, 0), cfg, 16, 16, frame_counts=(1, 2, 3), repeats=1)
        self.assertEqual(report.frame_counts, [1, 2, 3])
        self.assertEqual(len(report.seconds), 3)
        self.assertEqual(len(report.deviations), 3)
        self.assertTrue(math.isfinite(report.slope))
        self.assertTrue(all(s > 0 for s in report.seconds))


if __name__ == "__main__":
    unittest.main()
