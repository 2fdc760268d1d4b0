"""影像輸入輸出模組

PPM (P6) 讀寫、軌跡疊圖與 matplotlib 圖表（迭代次數掃描、EPE 對位移大小）。
疊圖中每個點依查詢點的初始 y 座標上色，預測遮擋時以 40% 亮度繪製。
"""

from __future__ import annotations

import io
import pathlib
import re
from typing import TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from loguru import logger  # noqa: E402

from utils.errors import DimensionError, UsageError  # noqa: E402
from utils.metrics import epe_trend_slope  # noqa: E402
from utils.misc import atomic_write_bytes  # noqa: E402
from utils.synthdata import round_pixel  # noqa: E402
from utils.wire_format import read_tensor  # noqa: E402

if TYPE_CHECKING:
    import os
    from collections.abc import Sequence

    from matplotlib.figure import Figure

    from utils.metrics import MagnitudeReport, MetricReport

OCCLUDED_INTENSITY = 0.4
TRACK_COLORMAP = "gist_rainbow"
_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def to_rgb8(frame: np.ndarray) -> np.ndarray:
    """[3,H,W] 值域 [0,1] → [H,W,3] uint8。"""
    if frame.ndim != 3 or frame.shape[0] != 3:
        msg = f"影格應為 [3,H,W]，收到 {frame.shape}"
        raise DimensionError(msg)
    scaled = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8).transpose(1, 2, 0)


def encode_ppm(image: np.ndarray) -> bytes:
    """[H,W,3] uint8 → P6 位元組。"""
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        msg = f"PPM 影像應為 [H,W,3] uint8，收到 {image.shape} {image.dtype}"
        raise DimensionError(msg)
    height, width = image.shape[:2]
    return f"P6\n{width} {height}\n255\n".encode("ascii") + np.ascontiguousarray(image).tobytes()


def write_ppm(path: str | os.PathLike[str], image: np.ndarray) -> pathlib.Path:
    return atomic_write_bytes(path, encode_ppm(image))


def decode_ppm(buf: bytes) -> np.ndarray:
    """P6 位元組 → [3,H,W] float32，值域 [0,1]。

    Raises:
        UsageError: 不是 8 位元 P6 或資料長度不符
    """
    match = _PPM_HEADER.match(buf)
    if match is None:
        msg = "不是合法的 P6 PPM 檔案"
        raise UsageError(msg)
    width, height, maxval = (int(g) for g in match.groups())
    if not 0 < maxval < 256:
        msg = f"只支援 8 位元 PPM（maxval {maxval}）"
        raise UsageError(msg)
    body = buf[match.end() :]
    expected = width * height * 3
    if len(body) != expected:
        msg = f"PPM 資料長度 {len(body)} 與 {width}x{height} 不符（應為 {expected}）"
        raise UsageError(msg)
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    return (pixels.transpose(2, 0, 1).astype(np.float32) / np.float32(maxval)).copy()


def read_ppm(path: str | os.PathLike[str]) -> np.ndarray:
    return decode_ppm(pathlib.Path(path).read_bytes())


def load_image(path: str | os.PathLike[str]) -> np.ndarray:
    """讀取 PPM 或 WTT1（[3,H,W]）影像，返回 float32 [3,H,W]。"""
    path = pathlib.Path(path)
    if path.suffix.lower() in {".ppm", ".pnm"}:
        return read_ppm(path)
    image = read_tensor(path)
    if image.ndim != 3 or image.shape[0] != 3:
        msg = f"{path} 應為 [3,H,W] 影像張量，收到 {image.shape}"
        raise DimensionError(msg)
    return image.astype(np.float32)


def track_colors(query_points: np.ndarray, height: int) -> np.ndarray:
    """依查詢點初始 y 座標從色圖取色，[N,3] float64，值域 [0,1]。"""
    cmap = matplotlib.colormaps[TRACK_COLORMAP]
    ys = np.asarray(query_points, dtype=np.float64)[:, 1] / max(height - 1, 1)
    return np.asarray(cmap(np.clip(ys, 0.0, 1.0)))[:, :3]


def render_overlay(
    frame: np.ndarray,
    points: np.ndarray,
    visible: np.ndarray,
    colors: np.ndarray,
    radius: int = 1,
) -> np.ndarray:
    """在影格上畫出軌跡點。

    Args:
        frame: [3,H,W]，值域 [0,1]
        points: [N,2] 像素座標
        visible: [N] 布林，False 的點以 OCCLUDED_INTENSITY 亮度繪製
        colors: [N,3]，值域 [0,1]
        radius: 方形點的半徑（0 為單一像素）

    Returns:
        [H,W,3] uint8
    """
    canvas = to_rgb8(frame)
    height, width = canvas.shape[:2]
    pixels = round_pixel(points)
    shades = np.where(np.asarray(visible, dtype=bool)[:, None], 1.0, OCCLUDED_INTENSITY) * colors
    rgb = np.floor(np.clip(shades, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    # 遮擋點先畫，可見點蓋在上面
    order = np.argsort(np.asarray(visible, dtype=bool), kind="stable")
    for n in order:
        cx, cy = pixels[n]
        x0, x1 = max(cx - radius, 0), min(cx + radius + 1, width)
        y0, y1 = max(cy - radius, 0), min(cy + radius + 1, height)
        if x0 < x1 and y0 < y1:
            canvas[y0:y1, x0:x1] = rgb[n]
    return canvas


def write_overlays(
    out_dir: str | os.PathLike[str],
    frames: np.ndarray,
    tracks: np.ndarray,
    visibility: np.ndarray,
    radius: int = 1,
) -> list[pathlib.Path]:
    """每格輸出一張 frame_XXX.ppm。

    Args:
        out_dir: 輸出目錄
        frames: [(T+1),3,H,W]
        tracks: [(T+1),N,2]
        visibility: [(T+1),N] 可見機率或布林（> 0.5 視為可見）

    Raises:
        UsageError: 影格數或點數不一致
    """
    if tracks.shape[0] != frames.shape[0] or visibility.shape != tracks.shape[:2]:
        msg = (
            f"軌跡 {tracks.shape}、可見性 {visibility.shape} 與影格 {frames.shape} 不一致"
        )
        raise UsageError(msg)
    root = pathlib.Path(out_dir)
    colors = track_colors(tracks[0], frames.shape[2])
    visible = np.asarray(visibility, dtype=np.float64) > 0.5
    written = []
    for t in range(frames.shape[0]):
        image = render_overlay(frames[t], tracks[t], visible[t], colors, radius)
        written.append(write_ppm(root / f"frame_{t:03d}.ppm", image))
    logger.debug(f"[VIZ] wrote {len(written)} overlays to {root}")
    return written


def _save_figure(fig: Figure, path: str | os.PathLike[str]) -> pathlib.Path:
    plt.tight_layout(pad=2.0)
    buf = io.BytesIO()
    fig.savefig(buf, format="png", bbox_inches="tight", facecolor=fig.get_facecolor())
    plt.close(fig)
    return atomic_write_bytes(path, buf.getvalue())


def plot_iteration_sweep(
    path: str | os.PathLike[str], sweep: Sequence[tuple[int, MetricReport]]
) -> pathlib.Path:
    """δ_avg、AJ、OA 對評估迭代次數 K 的折線圖。"""
    ks = [k for k, _ in sweep]
    fig, ax = plt.subplots(1, 1, figsize=(6, 4), dpi=120)
    for label, getter, color in (
        ("δ_avg", lambda r: r.delta_avg, "#5865F2"),
        ("AJ", lambda r: r.average_jaccard, "#bfaaff"),
        ("OA", lambda r: r.occlusion_accuracy, "#57F287"),
    ):
        values = [np.nan if getter(r) is None else 100.0 * getter(r) for _, r in sweep]
        ax.plot(ks, values, marker="o", linewidth=2, color=color, label=label)
    ax.set_xlabel("iterations K")
    ax.set_ylabel("score (%)")
    ax.set_xticks(ks)
    ax.grid(alpha=0.3)
    ax.legend()
    return _save_figure(fig, path)


def plot_epe_by_magnitude(path: str | os.PathLike[str], report: MagnitudeReport) -> pathlib.Path:
    """各位移大小分組的 EPE 長條圖，標示趨勢斜率。"""
    bins = [b for b in report.bins if b.epe is not None]
    fig, ax = plt.subplots(1, 1, figsize=(6, 4), dpi=120)
    ax.bar(
        [b.centre for b in bins],
        [b.epe for b in bins],
        width=[0.9 * (b.hi - b.lo) for b in bins],
        color="#bfaaff",
        edgecolor="#5865F2",
    )
    slope = epe_trend_slope(report.bins)
    title = "EPE vs. flow magnitude" if slope is None else f"EPE vs. flow magnitude (slope {slope:.3f})"
    ax.set_title(title, fontsize=12, pad=10)
    ax.set_xlabel("|flow| (px)")
    ax.set_ylabel("EPE (px)")
    ax.grid(alpha=0.3)
    return _save_figure(fig, path)
