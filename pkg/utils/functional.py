"""神經網路運算模組

在 autodiff 之上提供卷積、層正規化、注意力、雙線性取樣與損失函數。
卷積與取樣以單一原語實作並自帶反向傳播；注意力由基本運算組合而成。

座標慣例：x 為欄、y 為列，像素中心位於整數座標，原點在左上角。
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils import autodiff as ad
from utils.autodiff import Tensor
from utils.errors import DimensionError, NumericError, UsageError

if TYPE_CHECKING:
    from collections.abc import Sequence


def _lift_batch(x: Tensor, name: str) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return ad.reshape(x, (1, *x.shape)), True
    if x.ndim != 4:
        msg = f"{name} 需要 [C,H,W] 或 [B,C,H,W] 輸入，收到 {x.shape}"
        raise DimensionError(msg)
    return x, False


def conv2d(
    x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """二維互相關（cross-correlation），零填補。

    Args:
        x: [B,C_in,H,W] 或 [C_in,H,W]
        weight: [C_out,C_in,k,k]
        bias: [C_out]，可省略
        stride: 步長
        padding: 四邊各填補的像素數

    Returns:
        [B,C_out,H',W']，H' = floor((H + 2p - k) / stride) + 1

    Raises:
        DimensionError: 通道數不一致或輸出為空
    """
    xb, squeeze = _lift_batch(x, "conv2d")
    c_out, c_in, kh, kw = weight.shape
    if xb.shape[1] != c_in:
        msg = f"conv2d 通道數不一致: 輸入 {xb.shape[1]}，權重 {c_in}"
        raise DimensionError(msg)
    if kh != kw:
        msg = f"conv2d 僅支援正方形卷積核，收到 {kh}x{kw}"
        raise DimensionError(msg)
    k, s, p = kh, stride, padding
    batch, _, height, width = xb.shape
    out_h = (height + 2 * p - k) // s + 1
    out_w = (width + 2 * p - k) // s + 1
    if out_h < 1 or out_w < 1:
        msg = f"conv2d 輸出為空: 輸入 {height}x{width}, k={k}, stride={s}, padding={p}"
        raise DimensionError(msg)

    padded = np.pad(xb.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else xb.data
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    windows = windows[:, :, :out_h, :out_w]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)

    def _backward(g: np.ndarray) -> list[np.ndarray]:
        g_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        g_padded = np.zeros_like(padded)
        for i in range(k):
            for j in range(k):
                contrib = np.tensordot(weight.data[:, :, i, j], g, axes=([0], [1]))
                g_padded[
                    :, :, i : i + s * (out_h - 1) + 1 : s, j : j + s * (out_w - 1) + 1 : s
                ] += contrib.transpose(1, 0, 2, 3)
        g_x = g_padded[:, :, p : p + height, p : p + width] if p else g_padded
        grads = [g_x, g_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = [xb, weight] if bias is None else [xb, weight, bias]
    result = ad._emit("conv2d", np.ascontiguousarray(out), inputs, _backward)
    return ad.reshape(result, result.shape[1:]) if squeeze else result


def conv_transpose2d(
    x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int | None = None
) -> Tensor:
    """轉置卷積（卷積核大小等於步長，無重疊）。

    Args:
        x: [B,C_in,H,W]
        weight: [C_in,C_out,k,k]
        bias: [C_out]
        stride: 必須等於 k；None 表示使用 k

    Returns:
        [B,C_out,H*k,W*k]
    """
    xb, squeeze = _lift_batch(x, "conv_transpose2d")
    c_in, c_out, k, _ = weight.shape
    if stride is not None and stride != k:
        msg = f"conv_transpose2d 僅支援 stride == kernel，收到 stride={stride}, kernel={k}"
        raise UsageError(msg)
    if xb.shape[1] != c_in:
        msg = f"conv_transpose2d 通道數不一致: 輸入 {xb.shape[1]}，權重 {c_in}"
        raise DimensionError(msg)
    batch, _, height, width = xb.shape

    # [B,H,W,C_out,k,k] -> [B,C_out,H,k,W,k]
    out = np.tensordot(xb.data, weight.data, axes=([1], [0])).transpose(0, 3, 1, 4, 2, 5)
    out = out.reshape(batch, c_out, height * k, width * k)
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)

    def _backward(g: np.ndarray) -> list[np.ndarray]:
        g6 = g.reshape(batch, c_out, height, k, width, k)
        g_x = np.tensordot(g6, weight.data, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        g_w = np.tensordot(xb.data, g6, axes=([0, 2, 3], [0, 2, 4]))
        grads = [g_x, g_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = [xb, weight] if bias is None else [xb, weight, bias]
    result = ad._emit("conv_transpose2d", np.ascontiguousarray(out), inputs, _backward)
    return ad.reshape(result, result.shape[1:]) if squeeze else result


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """整數倍平均池化。"""
    if factor == 1:
        return x
    batch, channels, height, width = x.shape
    if height % factor or width % factor:
        msg = f"avg_pool2d: {height}x{width} 無法被 {factor} 整除"
        raise DimensionError(msg)
    blocks = ad.reshape(x, (batch, channels, height // factor, factor, width // factor, factor))
    return ad.mean(blocks, axis=(3, 5))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """沿最後一軸做層正規化後再仿射。"""
    channels = x.shape[-1]
    if gain.shape != (channels,) or bias.shape != (channels,):
        msg = f"layer_norm 參數形狀應為 ({channels},)，收到 {gain.shape} 與 {bias.shape}"
        raise DimensionError(msg)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    out = xhat * gain.data + bias.data

    def _backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lead = tuple(range(g.ndim - 1))
        g_hat = g * gain.data
        g_x = rstd * (
            g_hat
            - g_hat.mean(axis=-1, keepdims=True)
            - xhat * (g_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return g_x, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return ad._emit("layer_norm", out, (x, gain, bias), _backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight (+ bias)；weight 形狀為 [in, out]。"""
    out = ad.matmul(x, weight)
    return out if bias is None else out + bias


def softmax_attention(
    q: Tensor, k: Tensor, v: Tensor, heads: int = 1, return_weights: bool = False
) -> Tensor | tuple[Tensor, Tensor]:
    """多頭縮放點積注意力，無遮罩。

    Args:
        q: [..., n, d]
        k: [..., n, d]
        v: [..., n, d]
        heads: 頭數，d 必須能被整除
        return_weights: 是否一併返回注意力權重 [..., heads, n, n]

    Returns:
        [..., n, d]，或 (輸出, 權重)
    """
    d = q.shape[-1]
    if k.shape != q.shape or v.shape[-1] != d or v.shape[:-1] != k.shape[:-1]:
        msg = f"softmax_attention 形狀不一致: q {q.shape}, k {k.shape}, v {v.shape}"
        raise DimensionError(msg)
    if d % heads:
        msg = f"通道數 {d} 無法被頭數 {heads} 整除"
        raise DimensionError(msg)
    head_dim = d // heads

    split = "... n (h e) -> ... h n e"
    qh = ad.rearrange(q, split, h=heads)
    kh = ad.rearrange(k, split, h=heads)
    vh = ad.rearrange(v, split, h=heads)

    scores = ad.matmul(qh, ad.swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(head_dim))
    weights = ad.softmax(scores, axis=-1)
    out = ad.rearrange(ad.matmul(weights, vh), "... h n e -> ... n (h e)")
    return (out, weights) if return_weights else out


def bilinear_sample(features: Tensor, coords: Tensor) -> Tensor:
    """在像素座標上雙線性取樣特徵，超出範圍的座標截斷到邊界（clamp-to-edge）。

    整數座標會精確重現儲存的值。對特徵與座標皆可微分；
    被截斷方向的座標梯度為 0。

    Args:
        features: [C,H,W] 或批次 [B,C,H,W]
        coords: [N,2] 或批次 [B,N,2]，每列為 (x, y)

    Returns:
        [N,C] 或 [B,N,C]

    Raises:
        NumericError: 座標含非有限值
        DimensionError: 形狀不相容
    """
    single = features.ndim == 3
    f = features.data[None] if single else features.data
    c = coords.data[None] if single else coords.data
    if f.ndim != 4 or c.ndim != 3 or c.shape[-1] != 2 or c.shape[0] != f.shape[0]:
        msg = f"bilinear_sample 形狀不相容: features {features.shape}, coords {coords.shape}"
        raise DimensionError(msg)
    if not np.all(np.isfinite(c)):
        msg = "bilinear_sample 的座標含有 NaN 或 Inf"
        raise NumericError(msg)

    _, _, height, width = f.shape
    x, y = c[..., 0], c[..., 1]
    xc = np.clip(x, 0, width - 1)
    yc = np.clip(y, 0, height - 1)
    x0 = np.floor(xc).astype(np.int64)
    y0 = np.floor(yc).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    wx = (xc - x0).astype(f.dtype)
    wy = (yc - y0).astype(f.dtype)
    b = np.arange(f.shape[0])[:, None]

    f00 = f[b, :, y0, x0]
    f01 = f[b, :, y0, x1]
    f10 = f[b, :, y1, x0]
    f11 = f[b, :, y1, x1]
    w00 = ((1 - wx) * (1 - wy))[..., None]
    w01 = (wx * (1 - wy))[..., None]
    w10 = ((1 - wx) * wy)[..., None]
    w11 = (wx * wy)[..., None]
    out = f00 * w00 + f01 * w01 + f10 * w10 + f11 * w11

    inside_x = (x >= 0) & (x <= width - 1)
    inside_y = (y >= 0) & (y <= height - 1)

    def _backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gb = g[None] if single else g
        g_f = np.zeros_like(f)
        for yy, xx, w in ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)):
            np.add.at(g_f, (b, slice(None), yy, xx), gb * w)
        d_wx = (f01 - f00) * (1 - wy)[..., None] + (f11 - f10) * wy[..., None]
        d_wy = (f10 - f00) * (1 - wx)[..., None] + (f11 - f01) * wx[..., None]
        g_x = (gb * d_wx).sum(axis=-1) * inside_x
        g_y = (gb * d_wy).sum(axis=-1) * inside_y
        g_c = np.stack([g_x, g_y], axis=-1).astype(c.dtype)
        if single:
            return g_f[0], g_c[0]
        return g_f, g_c

    return ad._emit("bilinear_sample", out[0] if single else out, (features, coords), _backward)


def huber(r: Tensor, delta: float) -> Tensor:
    """逐元素 Huber：|r| <= delta 時為 0.5 r²，否則 delta (|r| - 0.5 delta)。"""
    if delta <= 0:
        msg = f"huber 的 delta 必須 > 0，收到 {delta}"
        raise UsageError(msg)
    a = np.abs(r.data)
    quadratic = a <= delta
    out = np.where(quadratic, 0.5 * r.data * r.data, delta * (a - 0.5 * delta)).astype(r.dtype)
    return ad._emit(
        "huber", out, (r,), lambda g: (g * np.where(quadratic, r.data, delta * np.sign(r.data)),)
    )


def binary_cross_entropy(p: Tensor, target: np.ndarray, eps: float = 1e-6) -> Tensor:
    """逐元素二元交叉熵，p 先截斷到 [eps, 1-eps]；target 視為常數。"""
    t = np.asarray(target, dtype=p.dtype)
    if t.shape != p.shape:
        msg = f"BCE 形狀不一致: p {p.shape}, target {t.shape}"
        raise DimensionError(msg)
    pc = ad.clamp(p, eps, 1.0 - eps)
    return -(ad.log(pc) * t + ad.log(1.0 - pc) * (1.0 - t))


def sinusoidal_embedding(positions: Sequence[float] | np.ndarray, dim: int) -> np.ndarray:
    """一維正弦位置編碼 [len(positions), dim]（前半 sin、後半 cos）。"""
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    angles = pos * freqs[None]
    emb = np.zeros((pos.shape[0], dim))
    emb[:, :half] = np.sin(angles)
    emb[:, half : 2 * half] = np.cos(angles)
    return emb
