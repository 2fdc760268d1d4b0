from __future__ import annotations

import pathlib
import tempfile
import unittest

import numpy as np

from utils.errors import DimensionError, UsageError
from utils.image_io import (
    OCCLUDED_INTENSITY,
    decode_ppm,
    encode_ppm,
    load_image,
    plot_epe_by_magnitude,
    plot_iteration_sweep,
    render_overlay,
    to_rgb8,
    track_colors,
    write_overlays,
    write_ppm,
)
from utils.metrics import MagnitudeBin, MagnitudeReport, MetricReport
from utils.wire_format import encode_tensor

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class PpmTests(unittest.TestCase):
    def test_encode_layout(self) -> None:
        image = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
        buf = encode_ppm(image)
        self.assertTrue(buf.startswith(b"P6\n3 2\n255\n"))
        self.assertEqual(buf[-18:], image.tobytes())

    def test_decode_handles_comments(self) -> None:
        body = bytes([255, 0, 0, 0, 255, 0])
        frame = decode_ppm(b"P6\n# made by hand\n2 1\n255\n" + body)
        self.assertEqual(frame.shape, (3, 1, 2))
        self.assertEqual(frame.dtype, np.float32)
        np.testing.assert_array_equal(frame[:, 0, 0], [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(frame[:, 0, 1], [0.0, 1.0, 0.0])

    def test_decode_rejects_bad_files(self) -> None:
        for buf in (b"P3\n1 1\n255\n1 2 3", b"P6\n1 1\n65535\n" + bytes(6), b"P6\n2 2\n255\n" + bytes(5)):
            with self.subTest(buf=buf[:12]), self.assertRaises(UsageError):
                decode_ppm(buf)

    def test_rgb8_rounding(self) -> None:
        frame = np.array([0.0, 0.5, 1.2]).reshape(3, 1, 1)
        np.testing.assert_array_equal(to_rgb8(frame)[0, 0], [0, 128, 255])
        with self.assertRaises(DimensionError):
            to_rgb8(np.zeros((4, 2, 2)))

    def test_load_image_formats(self) -> None:
        frame = np.random.default_rng(0).random((3, 4, 5))
        with tempfile.TemporaryDirectory() as tmp:
            root = pathlib.Path(tmp)
            write_ppm(root / "a.ppm", to_rgb8(frame))
            (root / "b.wtt").write_bytes(encode_tensor(frame.astype(np.float32)))
            (root / "c.wtt").write_bytes(encode_tensor(np.zeros((4, 5), dtype=np.float32)))
            from_ppm = load_image(root / "a.ppm")
            from_tensor = load_image(root / "b.wtt")
            with self.assertRaises(DimensionError):
                load_image(root / "c.wtt")
        np.testing.assert_allclose(from_ppm, frame, atol=1 / 255)
        np.testing.assert_array_equal(from_tensor, frame.astype(np.float32))


class OverlayTests(unittest.TestCase):
    def test_occluded_points_are_dimmed(self) -> None:
        frame = np.zeros((3, 8, 8))
        colors = np.array([[1.0, 1.0, 1.0], [1.0, 0.0, 0.0]])
        points = np.array([[1.0, 1.0], [5.2, 4.6]])
        image = render_overlay(frame, points, np.array([True, False]), colors, radius=0)
        np.testing.assert_array_equal(image[1, 1], [255, 255, 255])
        expected = int(np.floor(OCCLUDED_INTENSITY * 255 + 0.5))
        np.testing.assert_array_equal(image[5, 5], [expected, 0, 0])
        self.assertEqual(int(image.sum()), 3 * 255 + expected)

    def test_visible_points_drawn_on_top(self) -> None:
        frame = np.zeros((3, 4, 4))
        colors = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        points = np.array([[2.0, 2.0], [2.0, 2.0]])
        image = render_overlay(frame, points, np.array([True, False]), colors, radius=1)
        np.testing.assert_array_equal(image[2, 2], [0, 0, 255])
        np.testing.assert_array_equal(image[1:4, 1:4].reshape(-1, 3).max(axis=0), [0, 0, 255])

    def test_points_off_canvas_are_skipped(self) -> None:
        image = render_overlay(np.zeros((3, 4, 4)), np.array([[-5.0, 1.0]]), np.array([True]), np.ones((1, 3)))
        self.assertEqual(int(image.sum()), 0)

    def test_colors_follow_initial_height(self) -> None:
        colors = track_colors(np.array([[0.0, 0.0], [9.0, 0.0], [0.0, 15.0]]), 16)
        self.assertEqual(colors.shape, (3, 3))
        np.testing.assert_array_equal(colors[0], colors[1])
        self.assertFalse(np.array_equal(colors[0], colors[2]))

    def test_write_overlays(self) -> None:
        frames = np.random.default_rng(1).random((3, 3, 6, 6))
        tracks = np.tile(np.array([[1.0, 1.0], [4.0, 3.0]]), (3, 1, 1))
        visibility = np.array([[1.0, 1.0], [0.9, 0.2], [0.0, 0.6]])
        with tempfile.TemporaryDirectory() as tmp:
            written = write_overlays(tmp, frames, tracks, visibility)
            self.assertEqual([p.name for p in written], ["frame_000.ppm", "frame_001.ppm", "frame_002.ppm"])
            self.assertEqual(load_image(written[2]).shape, (3, 6, 6))
            with self.assertRaises(UsageError):
                write_overlays(tmp, frames[:2], tracks, visibility)


class PlotTests(unittest.TestCase):
    def test_iteration_sweep_png(self) -> None:
        sweep = [(k, MetricReport(delta_avg=0.1 * k, average_jaccard=None, occlusion_accuracy=0.8)) for k in (1, 2, 4)]
        with tempfile.TemporaryDirectory() as tmp:
            path = plot_iteration_sweep(pathlib.Path(tmp) / "sweep.png", sweep)
            self.assertTrue(path.read_bytes().startswith(PNG_SIGNATURE))

    def test_magnitude_png(self) -> None:
        report = MagnitudeReport([MagnitudeBin(0.0, 2.0, 3, 0.5), MagnitudeBin(2.0, 6.0, 0, None), MagnitudeBin(6.0, 12.0, 2, 1.5)], 0)
        with tempfile.TemporaryDirectory() as tmp:
            path = plot_epe_by_magnitude(pathlib.Path(tmp) / "epe.png", report)
            self.assertTrue(path.read_bytes().startswith(PNG_SIGNATURE))


if __name__ == "__main__":
    unittest.main()
