from __future__ import annotations

import math
import unittest

import numpy as np

from utils import autodiff as ad
from utils import functional as fn
from utils.autodiff import Tape, Tensor
from utils.errors import DimensionError, NumericError
from utils.gradcheck import check_gradients

TOLERANCE = 1e-6


def _leaf(array: np.ndarray) -> Tensor:
    return Tensor(array, requires_grad=True, dtype=np.float64)


def _conv_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: int) -> np.ndarray:
    batch, _, height, width = x.shape
    c_out, c_in, k, _ = w.shape
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (height + 2 * padding - k) // stride + 1
    out_w = (width + 2 * padding - k) // stride + 1
    out = np.zeros((batch, c_out, out_h, out_w))
    for n in range(batch):
        for o in range(c_out):
            for i in range(out_h):
                for j in range(out_w):
                    total = b[o]
                    for c in range(c_in):
                        for di in range(k):
                            for dj in range(k):
                                total += padded[n, c, i * stride + di, j * stride + dj] * w[o, c, di, dj]
                    out[n, o, i, j] = total
    return out


class ConvolutionTests(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(3)

    def test_conv2d_matches_direct_sum(self) -> None:
        x = self.rng.normal(size=(2, 3, 7, 6))
        w = self.rng.normal(size=(4, 3, 3, 3))
        b = self.rng.normal(size=4)
        with ad.default_dtype(np.float64):
            tx, tw, tb = Tensor(x), Tensor(w), Tensor(b)
        for stride, padding in ((1, 1), (2, 1), (2, 0)):
            with self.subTest(stride=stride, padding=padding):
                out = fn.conv2d(tx, tw, tb, stride, padding)
                np.testing.assert_allclose(out.data, _conv_oracle(x, w, b, stride, padding), atol=1e-12)

    def test_conv2d_gradients(self) -> None:
        x = _leaf(self.rng.normal(size=(2, 2, 5, 5)))
        w = _leaf(self.rng.normal(size=(3, 2, 3, 3)))
        b = _leaf(self.rng.normal(size=3))
        weights = self.rng.normal(size=(2, 3, 3, 3))
        result = check_gradients(lambda: ad.tsum(fn.conv2d(x, w, b, 2, 1) * weights), [x, w, b])
        self.assertTrue(result.passed(TOLERANCE), result)

    def test_conv2d_rejects_channel_mismatch(self) -> None:
        with self.assertRaises(DimensionError):
            fn.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    def test_conv_transpose_places_kernel_copies(self) -> None:
        x = self.rng.normal(size=(1, 2, 2, 3))
        w = self.rng.normal(size=(2, 3, 2, 2))
        out = fn.conv_transpose2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64))
        self.assertEqual(out.shape, (1, 3, 4, 6))
        for i in range(2):
            for j in range(3):
                block = out.data[0, :, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                expected = np.tensordot(x[0, :, i, j], w, axes=([0], [0]))
                np.testing.assert_allclose(block, expected, atol=1e-12)

    def test_conv_transpose_gradients(self) -> None:
        x = _leaf(self.rng.normal(size=(2, 3, 2, 2)))
        w = _leaf(self.rng.normal(size=(3, 2, 2, 2)))
        b = _leaf(self.rng.normal(size=2))
        weights = self.rng.normal(size=(2, 2, 4, 4))
        result = check_gradients(lambda: ad.tsum(fn.conv_transpose2d(x, w, b) * weights), [x, w, b])
        self.assertTrue(result.passed(TOLERANCE), result)

    def test_avg_pool(self) -> None:
        x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4), dtype=np.float64)
        pooled = fn.avg_pool2d(x, 2)
        np.testing.assert_allclose(pooled.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])


class BilinearSampleTests(unittest.TestCase):
    def setUp(self) -> None:
        self.features = np.random.default_rng(5).normal(size=(3, 4, 5))

    def test_integer_coordinates_are_exact(self) -> None:
        coords = np.array([[0.0, 0.0], [4.0, 3.0], [2.0, 1.0]])
        out = fn.bilinear_sample(Tensor(self.features, dtype=np.float64), Tensor(coords, dtype=np.float64))
        np.testing.assert_array_equal(out.data[0], self.features[:, 0, 0])
        np.testing.assert_array_equal(out.data[1], self.features[:, 3, 4])
        np.testing.assert_array_equal(out.data[2], self.features[:, 1, 2])

    def test_interpolation_and_clamping(self) -> None:
        f = Tensor(self.features, dtype=np.float64)
        out = fn.bilinear_sample(f, Tensor(np.array([[1.5, 2.0], [-3.0, 1.0], [9.0, 7.0]]), dtype=np.float64))
        np.testing.assert_allclose(out.data[0], 0.5 * (self.features[:, 2, 1] + self.features[:, 2, 2]))
        np.testing.assert_allclose(out.data[1], self.features[:, 1, 0])
        np.testing.assert_allclose(out.data[2], self.features[:, 3, 4])

    def test_clamped_direction_has_zero_gradient(self) -> None:
        f = Tensor(self.features, dtype=np.float64)
        coords = _leaf(np.array([[-2.0, 1.3], [2.4, 8.0]]))
        with Tape():
            ad.backward(ad.tsum(fn.bilinear_sample(f, coords)))
        self.assertEqual(coords.grad[0, 0], 0.0)
        self.assertEqual(coords.grad[1, 1], 0.0)
        self.assertNotEqual(coords.grad[0, 1], 0.0)

    def test_gradients_off_grid(self) -> None:
        f = _leaf(self.features.copy())
        coords = _leaf(np.array([[0.3, 0.6], [2.7, 1.2], [3.45, 2.55]]))
        weights = np.random.default_rng(1).normal(size=(3, 3))
        result = check_gradients(lambda: ad.tsum(fn.bilinear_sample(f, coords) * weights), [f, coords])
        self.assertTrue(result.passed(TOLERANCE), result)

    def test_batched_shapes(self) -> None:
        features = Tensor(np.zeros((2, 3, 4, 5)))
        out = fn.bilinear_sample(features, Tensor(np.zeros((2, 7, 2))))
        self.assertEqual(out.shape, (2, 7, 3))
        with self.assertRaises(DimensionError):
            fn.bilinear_sample(features, Tensor(np.zeros((3, 7, 2))))

    def test_non_finite_coordinates(self) -> None:
        coords = Tensor(np.array([[np.nan, 0.0]]))
        with self.assertRaises(NumericError):
            fn.bilinear_sample(Tensor(self.features), coords)


class LayerTests(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(11)

    def test_layer_norm_gradients(self) -> None:
        x = _leaf(self.rng.normal(size=(3, 5)))
        gain = _leaf(self.rng.normal(size=5))
        bias = _leaf(self.rng.normal(size=5))
        weights = self.rng.normal(size=(3, 5))
        result = check_gradients(lambda: ad.tsum(fn.layer_norm(x, gain, bias) * weights), [x, gain, bias])
        self.assertTrue(result.passed(TOLERANCE), result)

    def test_attention_weights_are_distributions(self) -> None:
        q, k, v = (Tensor(self.rng.normal(size=(2, 4, 6)), dtype=np.float64) for _ in range(3))
        out, weights = fn.softmax_attention(q, k, v, heads=2, return_weights=True)
        self.assertEqual(out.shape, (2, 4, 6))
        self.assertEqual(weights.shape, (2, 2, 4, 4))
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0)

    def test_attention_gradients(self) -> None:
        q, k, v = (_leaf(self.rng.normal(size=(3, 4))) for _ in range(3))
        weights = self.rng.normal(size=(3, 4))
        result = check_gradients(lambda: ad.tsum(fn.softmax_attention(q, k, v, heads=2) * weights), [q, k, v])
        self.assertTrue(result.passed(TOLERANCE), result)

    def test_attention_rejects_bad_heads(self) -> None:
        x = Tensor(np.zeros((3, 5)))
        with self.assertRaises(DimensionError):
            fn.softmax_attention(x, x, x, heads=2)


class LossFunctionTests(unittest.TestCase):
    def test_huber_values(self) -> None:
        r = Tensor(np.array([0.0, 2.0, 10.0]), dtype=np.float64)
        np.testing.assert_allclose(fn.huber(r, 6.0).data, [0.0, 2.0, 42.0])

    def test_huber_gradient_is_bounded(self) -> None:
        r = _leaf(np.array([-10.0, 3.0, 10.0]))
        with Tape():
            ad.backward(ad.tsum(fn.huber(r, 6.0)))
        np.testing.assert_allclose(r.grad, [-6.0, 3.0, 6.0])

    def test_bce_at_half(self) -> None:
        p = Tensor(np.array([0.5, 0.5]), dtype=np.float64)
        out = fn.binary_cross_entropy(p, np.array([1.0, 0.0]))
        np.testing.assert_allclose(out.data, [math.log(2.0)] * 2)

    def test_sinusoidal_embedding(self) -> None:
        emb = fn.sinusoidal_embedding([0, 1, 2], 8)
        self.assertEqual(emb.shape, (3, 8))
        np.testing.assert_allclose(emb[0], [0, 0, 0, 0, 1, 1, 1, 1])


if __name__ == "__main__":
    unittest.main()
