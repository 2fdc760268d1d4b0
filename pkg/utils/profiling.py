"""效能量測模組

- AllocationMeter：記錄作用期間每個運算輸出的位元組數（最大單筆與總量）
- 追蹤頭的記憶體結構檢查：一次迭代的配置量對照 (T+1)·N·(2C+D_h+2)
- 追蹤頭時間對目標格數 T 的線性擬合
- 等價 cost volume 的解析記憶體量，用於對照
"""

from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
from loguru import logger

from utils import autodiff as ad
from utils.encoder import encode
from utils.errors import UsageError
from utils.warp_head import HeadParams, feature_tokens, head_iteration, init_state

if TYPE_CHECKING:
    from collections.abc import Sequence
    from types import TracebackType

    from utils.params import ParamStore
    from utils.run_config import ModelConfig

DEFAULT_FRAME_COUNTS = (4, 8, 16)


class AllocationMeter:
    """以 autodiff 的配置監聽器統計張量配置。

    Example:
        with AllocationMeter() as meter:
            ...
        meter.largest, meter.total
    """

    def __init__(self) -> None:
        self.count = 0
        self.total = 0
        self.largest = 0
        self.largest_op = ""
        self.by_op: dict[str, int] = defaultdict(int)
        self._scope: Any = None

    def record(self, op: str, nbytes: int) -> None:
        self.count += 1
        self.total += nbytes
        self.by_op[op] += nbytes
        if nbytes > self.largest:
            self.largest = nbytes
            self.largest_op = op

    def __enter__(self) -> AllocationMeter:
        self._scope = ad.allocation_listener(self.record)
        self._scope.__enter__()
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self._scope.__exit__(exc_type, exc, tb)
        self._scope = None


def token_bytes(frames: int, points: int, cfg: ModelConfig, itemsize: int = 4) -> int:
    """(T+1)·N·(2C+D_h+2) 個元素的位元組數。"""
    return frames * points * cfg.token_channels * itemsize


def cost_volume_bytes(frames: int, points: int, radius: int, levels: int = 4, itemsize: int = 4) -> int:
    """每點在每個目標格、每個金字塔層都存 (2R+1)² 個相關值的 cost volume 位元組數。"""
    return frames * points * (2 * radius + 1) ** 2 * levels * itemsize


@dataclass(slots=True)
class MemoryReport:
    frames: int
    points: int
    token_bytes: int
    largest_bytes: int
    largest_op: str
    total_bytes: int
    cost_volume_bytes: int
    radius: int

    @property
    def largest_ratio(self) -> float:
        return self.largest_bytes / self.token_bytes

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["largest_ratio"] = self.largest_ratio
        data["total_ratio"] = self.total_bytes / self.token_bytes
        return data


@dataclass(slots=True)
class TimingReport:
    frame_counts: list[int]
    seconds: list[float]
    slope: float
    intercept: float
    deviations: list[float] = field(default_factory=list)

    @property
    def max_deviation(self) -> float:
        return max(self.deviations) if self.deviations else 0.0

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["max_deviation"] = self.max_deviation
        return data


def random_frames(frames: int, height: int, width: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.random((frames, 3, height, width), dtype=np.float32)


def measure_head_memory(
    store: ParamStore,
    cfg: ModelConfig,
    frames: np.ndarray,
    radius: int = 4,
) -> MemoryReport:
    """只量測一次追蹤頭迭代（編碼與初始狀態不計入）。"""
    params = HeadParams.from_store(store, cfg)
    features = encode(store, frames, cfg)
    track_field, hidden = init_state(features, params)
    f_tokens = feature_tokens(features)
    with AllocationMeter() as meter:
        head_iteration(features, f_tokens, track_field, hidden, params, cfg)
    num_frames = frames.shape[0]
    points = track_field.u.shape[1]
    itemsize = f_tokens.dtype.itemsize
    report = MemoryReport(
        frames=num_frames,
        points=points,
        token_bytes=token_bytes(num_frames, points, cfg, itemsize),
        largest_bytes=meter.largest,
        largest_op=meter.largest_op,
        total_bytes=meter.total,
        cost_volume_bytes=cost_volume_bytes(num_frames, points, radius, itemsize=itemsize),
        radius=radius,
    )
    logger.debug(
        f"[BENCH] head iteration largest {meter.largest} B ({meter.largest_op}), "
        f"tokens {report.token_bytes} B, ratio {report.largest_ratio:.2f}"
    )
    return report


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, list[float]]:
    """最小平方直線，返回 (斜率, 截距, 各點相對偏差 |fit - y| / y)。"""
    if len(xs) < 2:
        msg = "線性擬合至少需要兩個點"
        raise UsageError(msg)
    slope, intercept = np.polyfit(np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64), 1)
    deviations = [abs(slope * x + intercept - y) / y if y > 0 else 0.0 for x, y in zip(xs, ys, strict=True)]
    return float(slope), float(intercept), deviations


def time_head(
    store: ParamStore,
    cfg: ModelConfig,
    height: int,
    width: int,
    frame_counts: Sequence[int] = DEFAULT_FRAME_COUNTS,
    repeats: int = 3,
    seed: int = 0,
) -> TimingReport:
    """追蹤頭 K 次迭代的牆鐘時間（取 repeats 次中的最小值）對目標格數 T 的線性擬合。"""
    seconds = []
    for t in frame_counts:
        frames = random_frames(t + 1, height, width, seed)
        params = HeadParams.from_store(store, cfg)
        features = encode(store, frames, cfg)
        f_tokens = feature_tokens(features)
        best = float("inf")
        for _ in range(max(repeats, 1)):
            track_field, hidden = init_state(features, params)
            started = time.perf_counter()
            for _ in range(cfg.effective_iterations):
                track_field, hidden, _, _ = head_iteration(
                    features, f_tokens, track_field, hidden, params, cfg
                )
            best = min(best, time.perf_counter() - started)
        seconds.append(best)
        logger.debug(f"[BENCH] T={t} head {best * 1000:.1f} ms")
    slope, intercept, deviations = linear_fit(list(frame_counts), seconds)
    return TimingReport(list(frame_counts), seconds, slope, intercept, deviations)
