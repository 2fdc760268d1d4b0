"""有限差分梯度檢查

以中央差分比對 autodiff 的解析梯度，只在 float64 下使用。
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from loguru import logger

from utils.autodiff import Tape, backward
from utils.errors import UsageError

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from utils.autodiff import Tensor

# 分母下限：兩個梯度都接近 0 時改用絕對誤差的尺度
RELATIVE_FLOOR = 1e-3


@dataclass(slots=True)
class GradCheckResult:
    max_relative_error: float
    worst_input: int
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float

    def passed(self, tolerance: float) -> bool:
        return self.max_relative_error < tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(|a| + |n|, RELATIVE_FLOOR)。"""
    return np.abs(analytic - numeric) / np.maximum(
        np.abs(analytic) + np.abs(numeric), RELATIVE_FLOOR
    )


def analytic_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.zero_grad()
    with Tape():
        loss = fn()
        backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]


def numeric_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    eps: float = 1e-5,
    indices: Sequence[tuple[int, ...]] | None = None,
) -> np.ndarray:
    """中央差分；只計算 indices 指定的元素，其餘為 0。"""
    grad = np.zeros_like(tensor.data)
    targets = indices if indices is not None else list(np.ndindex(tensor.shape))
    for idx in targets:
        original = tensor.data[idx]
        tensor.data[idx] = original + eps
        plus = fn().item()
        tensor.data[idx] = original - eps
        minus = fn().item()
        tensor.data[idx] = original
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    *,
    eps: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """比對 fn() 對 inputs 的解析梯度與數值梯度。

    Args:
        fn: 無參數、返回純量 Tensor 的函數
        inputs: 要檢查的 float64 葉節點
        eps: 差分步長
        max_entries: 每個輸入最多抽查的元素數；None 表示全部
        rng: 抽查用的亂數產生器

    Returns:
        最差元素的相對誤差與位置

    Raises:
        UsageError: 輸入不是 float64 或不需要梯度
    """
    for t in inputs:
        if t.dtype != np.float64:
            msg = f"梯度檢查需要 float64 輸入，收到 {t.dtype}"
            raise UsageError(msg)
        if not t.requires_grad:
            msg = "梯度檢查的輸入必須設定 requires_grad=True"
            raise UsageError(msg)

    analytic = analytic_gradients(fn, inputs)
    rng = rng or np.random.default_rng(0)
    worst = GradCheckResult(0.0, -1, (), 0.0, 0.0)
    for i, t in enumerate(inputs):
        all_idx = list(np.ndindex(t.shape))
        if max_entries is not None and len(all_idx) > max_entries:
            picks = rng.choice(len(all_idx), size=max_entries, replace=False)
            all_idx = [all_idx[j] for j in sorted(picks)]
        numeric = numeric_gradient(fn, t, eps, all_idx)
        for idx in all_idx:
            err = float(relative_error(analytic[i][idx], numeric[idx]))
            if err >= worst.max_relative_error:
                worst = GradCheckResult(err, i, idx, float(analytic[i][idx]), float(numeric[idx]))

    logger.debug(
        f"[GRADCHECK] max rel err {worst.max_relative_error:.3e} at input {worst.worst_input} "
        f"{worst.worst_index} (analytic {worst.analytic:.6e}, numeric {worst.numeric:.6e})"
    )
    return worst
