from __future__ import annotations

import unittest

import numpy as np

from utils import autodiff as ad
from utils.autodiff import Tape, Tensor
from utils.errors import DimensionError, NumericError, UsageError
from utils.gradcheck import check_gradients

TOLERANCE = 1e-6


def _leaf(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)


class AutodiffGradientTests(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(7)

    def test_elementwise_ops(self) -> None:
        a = _leaf(self.rng, 3, 4)
        b = _leaf(self.rng, 4)

        def loss() -> Tensor:
            mixed = ad.sigmoid(a) * b + ad.exp(a * 0.3) / (b * b + 1.0) - ad.gelu(a - b)
            return ad.tsum(mixed * mixed)

        result = check_gradients(loss, [a, b])
        self.assertTrue(result.passed(TOLERANCE), result)

    def test_matmul_broadcast(self) -> None:
        a = _leaf(self.rng, 2, 3, 4)
        b = _leaf(self.rng, 4, 5)
        result = check_gradients(lambda: ad.tsum(ad.matmul(a, b) * 0.5), [a, b])
        self.assertTrue(result.passed(TOLERANCE), result)

    def test_softmax_and_norm(self) -> None:
        a = _leaf(self.rng, 4, 6)
        weights = self.rng.normal(size=(4, 6))

        def loss() -> Tensor:
            return ad.tsum(ad.softmax(a, axis=-1) * weights) + ad.tsum(ad.vector_norm(a, axis=-1))

        result = check_gradients(loss, [a])
        self.assertTrue(result.passed(TOLERANCE), result)

    def test_shape_ops(self) -> None:
        a = _leaf(self.rng, 2, 6, 3)
        b = _leaf(self.rng, 2, 6, 1)
        weights = self.rng.normal(size=(2, 3, 2, 3))

        def loss() -> Tensor:
            joined = ad.concat([a, b], axis=-1)
            grid = ad.rearrange(joined, "t (h w) c -> t c h w", h=2, w=3)
            picked = ad.take(grid, np.array([0, 2, 2]), axis=1)
            return ad.tsum(picked[:, :, :, 1:] * weights[:, :, :, :2]) + ad.mean(ad.transpose(a))

        result = check_gradients(loss, [a, b])
        self.assertTrue(result.passed(TOLERANCE), result)

    def test_reused_input_accumulates(self) -> None:
        x = Tensor(np.array([1.5, -2.0]), requires_grad=True, dtype=np.float64)
        with Tape():
            ad.backward(ad.tsum(x * x + x))
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)


class AutodiffBehaviourTests(unittest.TestCase):
    def test_default_dtype_is_scoped(self) -> None:
        self.assertEqual(Tensor([1.0]).dtype, np.float32)
        with ad.default_dtype(np.float64):
            self.assertEqual(Tensor([1.0]).dtype, np.float64)
        self.assertEqual(Tensor([1.0]).dtype, np.float32)

    def test_backward_requires_scalar_on_tape(self) -> None:
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape():
            y = x * 2.0
            with self.assertRaises(UsageError):
                ad.backward(y)
        with self.assertRaises(UsageError):
            ad.backward(ad.tsum(x))

    def test_tape_skips_constants(self) -> None:
        with Tape() as tape:
            ad.tsum(Tensor(np.ones(3)) * 2.0)
        self.assertEqual(len(tape), 0)

    def test_non_finite_output_raises(self) -> None:
        with np.errstate(divide="ignore"), self.assertRaises(NumericError):
            ad.log(Tensor(np.array([0.0, 1.0])))

    def test_matmul_shape_checks(self) -> None:
        with self.assertRaises(DimensionError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_allocation_listener_sees_every_op(self) -> None:
        seen: list[tuple[str, int]] = []
        with ad.allocation_listener(lambda op, nbytes: seen.append((op, nbytes))):
            a = Tensor(np.ones((4, 5)))
            ad.tsum(a * a)
        self.assertEqual([op for op, _ in seen], ["mul", "sum"])
        self.assertEqual(seen[0][1], 4 * 5 * 4)


if __name__ == "__main__":
    unittest.main()
