"""特徵編碼器模組

把影片映射成索引步長 s′ 的稠密逐格特徵 F：
1. 骨幹：三個 3×3、步長 2 的卷積區塊，得到步長 8 的低解析度特徵（C_b 通道）
2. 上採樣器：learned（轉置卷積 + 跳接）或 bilinear（直接雙線性取樣低解析度特徵）
3. 直接作用於原始影格的兩層 U-Net，與上採樣結果串接後以 1×1 卷積投影到 C 通道

輸入先在下方與右方做反射填補，因此像素座標不變，裁切只需忽略畫布外的格子。
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from loguru import logger

from utils import autodiff as ad
from utils import functional as fn
from utils.autodiff import Tensor
from utils.errors import DimensionError
from utils.params import Initializer, ParamStore
from utils.run_config import ModelConfig

SKIP_CHANNELS = {2: 16, 4: 32}
UNET_CHANNELS = (8, 16)
UPSAMPLED_CHANNELS = 16


@dataclass(slots=True)
class PadInfo:
    """Original canvas size and the bottom/right padding applied before encoding."""

    height: int
    width: int
    pad_bottom: int
    pad_right: int

    @property
    def padded_shape(self) -> tuple[int, int]:
        return self.height + self.pad_bottom, self.width + self.pad_right


@dataclass(slots=True)
class BackboneOutput:
    lowres: Tensor
    skips: dict[int, Tensor]


@dataclass(slots=True)
class FeatureField:
    """features: [(T+1),C,H′,W′] at ``stride`` pixels per cell."""

    features: Tensor
    stride: int
    pad: PadInfo

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.features.shape[2], self.features.shape[3]

    @property
    def channels(self) -> int:
        return self.features.shape[1]


def init_encoder_params(store: ParamStore, cfg: ModelConfig, init: Initializer) -> None:
    """在 store 中建立編碼器參數（enc.*、up.*、unet.*、feat.*）。"""
    cb, c = cfg.backbone_channels, cfg.feature_channels
    s2, s4 = SKIP_CHANNELS[2], SKIP_CHANNELS[4]
    u1, u2 = UNET_CHANNELS

    for name, (c_in, c_out) in {
        "enc.b1": (3, s2),
        "enc.b2": (s2, s4),
        "enc.b3": (s4, cb),
    }.items():
        store.add(f"{name}.w", init.conv(c_out, c_in, 3))
        store.add(f"{name}.b", init.zeros(c_out))

    if cfg.upsampler == "learned":
        store.add("up.t1.w", init.conv_transpose(cb, s4, 2))
        store.add("up.t1.b", init.zeros(s4))
        store.add("up.c1.w", init.conv(s4, 2 * s4, 3))
        store.add("up.c1.b", init.zeros(s4))
        store.add("up.t2.w", init.conv_transpose(s4, s2, 2))
        store.add("up.t2.b", init.zeros(s2))
        store.add("up.c2.w", init.conv(UPSAMPLED_CHANNELS, 2 * s2, 3))
        store.add("up.c2.b", init.zeros(UPSAMPLED_CHANNELS))
    else:
        store.add("up.proj.w", init.conv(UPSAMPLED_CHANNELS, cb, 1))
        store.add("up.proj.b", init.zeros(UPSAMPLED_CHANNELS))

    store.add("unet.e1.w", init.conv(u1, 3, 3))
    store.add("unet.e1.b", init.zeros(u1))
    store.add("unet.e2.w", init.conv(u2, u1, 3))
    store.add("unet.e2.b", init.zeros(u2))
    store.add("unet.e3.w", init.conv(u2, u2, 3))
    store.add("unet.e3.b", init.zeros(u2))
    store.add("unet.t1.w", init.conv_transpose(u2, u2, 2))
    store.add("unet.t1.b", init.zeros(u2))
    store.add("unet.d1.w", init.conv(u2, 2 * u2, 3))
    store.add("unet.d1.b", init.zeros(u2))

    store.add("feat.proj.w", init.conv(c, UPSAMPLED_CHANNELS + u2, 1))
    store.add("feat.proj.b", init.zeros(c))


def pad_multiple(cfg: ModelConfig) -> int:
    """輸入邊長必須整除的倍數：同時滿足骨幹步長與 patch 化的最小公倍數。"""
    return math.lcm(cfg.backbone_stride, cfg.stride_ratio * cfg.effective_patch)


def pad_frames(frames: np.ndarray, multiple: int) -> tuple[np.ndarray, PadInfo]:
    """在下方與右方反射填補到 multiple 的倍數；填補量超過邊長時改用邊緣複製。

    Args:
        frames: [(T+1),3,H,W]
        multiple: 目標倍數

    Returns:
        (填補後影格, PadInfo)
    """
    height, width = frames.shape[2], frames.shape[3]
    pad_bottom = -height % multiple
    pad_right = -width % multiple
    info = PadInfo(height, width, pad_bottom, pad_right)
    if pad_bottom == 0 and pad_right == 0:
        return frames, info
    mode = "reflect" if pad_bottom < height and pad_right < width else "edge"
    padded = np.pad(frames, ((0, 0), (0, 0), (0, pad_bottom), (0, pad_right)), mode=mode)
    logger.trace(f"[ENCODER] padded {height}x{width} by ({pad_bottom}, {pad_right}) using {mode}")
    return padded, info


def normalize_frames(frames: np.ndarray) -> Tensor:
    """[0,1] 影格映射到 [-1,1]。"""
    return Tensor(frames * 2.0 - 1.0)


def _block(store: ParamStore, name: str, x: Tensor, stride: int = 1, padding: int = 1) -> Tensor:
    return ad.relu(fn.conv2d(x, store[f"{name}.w"], store[f"{name}.b"], stride, padding))


def encode_lowres(store: ParamStore, frames: Tensor, cfg: ModelConfig) -> BackboneOutput:
    """骨幹：逐影格獨立計算步長 8 的特徵。

    Args:
        store: 參數
        frames: 正規化後的 [(T+1),3,H,W]，H、W 可被 8 整除
        cfg: 模型設定

    Returns:
        BackboneOutput（lowres: [(T+1),C_b,H/8,W/8]，skips: 步長 2 與 4 的特徵）
    """
    height, width = frames.shape[2], frames.shape[3]
    if height % cfg.backbone_stride or width % cfg.backbone_stride:
        msg = f"影格 {height}x{width} 無法被骨幹步長 {cfg.backbone_stride} 整除（填補遺漏）"
        raise DimensionError(msg)
    s2 = _block(store, "enc.b1", frames, stride=2)
    s4 = _block(store, "enc.b2", s2, stride=2)
    lowres = _block(store, "enc.b3", s4, stride=2)
    return BackboneOutput(lowres, {2: s2, 4: s4})


def _learned_upsample(store: ParamStore, backbone: BackboneOutput) -> Tensor:
    x = fn.conv_transpose2d(backbone.lowres, store["up.t1.w"], store["up.t1.b"])
    x = _block(store, "up.c1", ad.concat([x, backbone.skips[4]], axis=1))
    x = fn.conv_transpose2d(x, store["up.t2.w"], store["up.t2.b"])
    return _block(store, "up.c2", ad.concat([x, backbone.skips[2]], axis=1))


def _bilinear_upsample(store: ParamStore, backbone: BackboneOutput) -> Tensor:
    lowres = backbone.lowres
    frames, _, h8, w8 = lowres.shape
    h2, w2 = h8 * 4, w8 * 4
    # 步長 2 格子中心 2j+0.5 對應到步長 8 格子座標 (2j+0.5-3.5)/8
    cols = (2 * np.arange(w2) + 0.5 - 3.5) / 8
    rows = (2 * np.arange(h2) + 0.5 - 3.5) / 8
    yy, xx = np.meshgrid(rows, cols, indexing="ij")
    grid = np.stack([xx, yy], axis=-1).reshape(1, -1, 2)
    coords = Tensor(np.broadcast_to(grid, (frames, h2 * w2, 2)), dtype=lowres.dtype)
    sampled = fn.bilinear_sample(lowres, coords)
    dense = ad.rearrange(sampled, "t (h w) c -> t c h w", h=h2, w=w2)
    return _block(store, "up.proj", dense, padding=0)


def unet_branch(store: ParamStore, frames: Tensor) -> Tensor:
    """作用於原始影格的兩層 U-Net，輸出步長 2。"""
    e1 = _block(store, "unet.e1", frames)
    e2 = _block(store, "unet.e2", e1, stride=2)
    e3 = _block(store, "unet.e3", e2, stride=2)
    d1 = fn.conv_transpose2d(e3, store["unet.t1.w"], store["unet.t1.b"])
    return _block(store, "unet.d1", ad.concat([d1, e2], axis=1))


def upsample(
    store: ParamStore, backbone: BackboneOutput, frames: Tensor, cfg: ModelConfig, pad: PadInfo
) -> FeatureField:
    """上採樣骨幹特徵並與 U-Net 分支串接，投影到 C 通道。

    原始影格只經由 U-Net 分支影響輸出。
    """
    if cfg.upsampler == "learned":
        up = _learned_upsample(store, backbone)
    else:
        up = _bilinear_upsample(store, backbone)
    fused = ad.concat([up, unet_branch(store, frames)], axis=1)
    features = fn.conv2d(fused, store["feat.proj.w"], store["feat.proj.b"])
    factor = cfg.stride_ratio // 2
    if factor > 1:
        features = fn.avg_pool2d(features, factor)
    return FeatureField(features, cfg.stride_ratio, pad)


def encode(store: ParamStore, frames: np.ndarray, cfg: ModelConfig) -> FeatureField:
    """完整編碼：填補 → 正規化 → 骨幹 → 上採樣。

    Args:
        store: 參數
        frames: [(T+1),3,H,W]，值域 [0,1]
        cfg: 模型設定

    Returns:
        FeatureField，H′ = H_pad / s′
    """
    padded, pad = pad_frames(np.asarray(frames), pad_multiple(cfg))
    x = normalize_frames(padded)
    backbone = encode_lowres(store, x, cfg)
    return upsample(store, backbone, x, cfg, pad)
