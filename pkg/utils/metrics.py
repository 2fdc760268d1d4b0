"""追蹤與光流評估指標模組

點追蹤：δ_avg（閾值 1/2/4/8/16 內的可見點比例）、OA（可見性分類準確率）、AJ（平均 Jaccard）。
光流：EPE、Fl-all、1px，以及依真值位移大小分組的 EPE。

所有點追蹤指標都在 256×256 的正規化評估座標中計算，並排除查詢格（第 0 格）。
平均值一律以 math.fsum 累加，結果與加總順序無關。
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from utils.errors import DimensionError, UsageError

if TYPE_CHECKING:
    from collections.abc import Sequence

    from utils.synthdata import GroundTruth

EVAL_FRAME_SIZE = 256
THRESHOLDS = (1, 2, 4, 8, 16)
VISIBLE_PROB = 0.5
FL_ABS_PIXELS = 3.0
FL_REL = 0.05


@dataclass(slots=True)
class MetricReport:
    """Rates are fractions in [0, 1]; ``None`` marks an undefined metric."""

    delta_avg: float | None = None
    delta: dict[int, float | None] = field(default_factory=dict)
    occlusion_accuracy: float | None = None
    average_jaccard: float | None = None
    jaccard: dict[int, float | None] = field(default_factory=dict)
    epe: float | None = None
    fl_all: float | None = None
    one_px: float | None = None
    num_points: int = 0
    num_visible: int = 0
    iterations: int | None = None

    def to_dict(self) -> dict[str, Any]:
        data = dataclasses.asdict(self)
        data["delta"] = {str(k): v for k, v in self.delta.items()}
        data["jaccard"] = {str(k): v for k, v in self.jaccard.items()}
        return data


@dataclass(slots=True)
class MagnitudeBin:
    lo: float
    hi: float
    count: int
    epe: float | None

    @property
    def centre(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass(slots=True)
class MagnitudeReport:
    bins: list[MagnitudeBin]
    out_of_range: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "bins": [dataclasses.asdict(b) for b in self.bins],
            "out_of_range": self.out_of_range,
            "trend_slope": epe_trend_slope(self.bins),
        }


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _check_tracks(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[-1] != 2:
        msg = f"預測軌跡 {pred.shape} 與真值 {gt.shape} 形狀不一致（應為 [(T+1),N,2]）"
        raise DimensionError(msg)


def to_eval_frame(tracks: np.ndarray, height: int, width: int) -> np.ndarray:
    """把像素座標縮放到 256×256 評估座標：x·256/W、y·256/H。"""
    scale = np.array([EVAL_FRAME_SIZE / width, EVAL_FRAME_SIZE / height], dtype=np.float64)
    return np.asarray(tracks, dtype=np.float64) * scale


def _within(pred: np.ndarray, gt: np.ndarray, threshold: float) -> np.ndarray:
    dx = pred[..., 0] - gt[..., 0]
    dy = pred[..., 1] - gt[..., 1]
    return dx * dx + dy * dy < threshold * threshold


def delta_avg(
    pred_tracks: np.ndarray, gt_tracks: np.ndarray, gt_vis: np.ndarray
) -> tuple[float | None, dict[int, float | None]]:
    """閾值內可見點比例。

    Args:
        pred_tracks: [(T+1),N,2]，評估座標
        gt_tracks: [(T+1),N,2]，評估座標
        gt_vis: [(T+1),N] 布林

    Returns:
        (δ_avg, {閾值: 比例})；沒有可見點時全部為 None
    """
    pred = np.asarray(pred_tracks, dtype=np.float64)
    gt = np.asarray(gt_tracks, dtype=np.float64)
    _check_tracks(pred, gt)
    vis = np.asarray(gt_vis, dtype=bool)[1:]
    count = int(vis.sum())
    if count == 0:
        return None, dict.fromkeys(THRESHOLDS)
    fractions: dict[int, float | None] = {}
    for thr in THRESHOLDS:
        hits = _within(pred[1:], gt[1:], thr) & vis
        fractions[thr] = int(hits.sum()) / count
    return _mean([v for v in fractions.values() if v is not None]), fractions


def occlusion_accuracy(pred_vis_prob: np.ndarray, gt_vis: np.ndarray) -> float | None:
    """(p > 0.5) 與真值可見性一致的比例；沒有目標格時為 None。"""
    pred = np.asarray(pred_vis_prob, dtype=np.float64)[1:] > VISIBLE_PROB
    gt = np.asarray(gt_vis, dtype=bool)[1:]
    if pred.shape != gt.shape:
        msg = f"可見性形狀不一致: 預測 {pred.shape}，真值 {gt.shape}"
        raise DimensionError(msg)
    if gt.size == 0:
        return None
    return int((pred == gt).sum()) / gt.size


def average_jaccard(
    pred_tracks: np.ndarray,
    pred_vis_prob: np.ndarray,
    gt_tracks: np.ndarray,
    gt_vis: np.ndarray,
) -> tuple[float | None, dict[int, float | None]]:
    """AJ：每個閾值的 TP/(TP+FN+FP) 取平均，分母為 0 的閾值不列入平均。

    TP：真值可見、預測可見且在閾值內。
    FN：真值可見，但預測遮擋或超出閾值。
    FP：真值遮擋但預測可見。
    """
    pred = np.asarray(pred_tracks, dtype=np.float64)
    gt = np.asarray(gt_tracks, dtype=np.float64)
    _check_tracks(pred, gt)
    pred_vis = np.asarray(pred_vis_prob, dtype=np.float64)[1:] > VISIBLE_PROB
    vis = np.asarray(gt_vis, dtype=bool)[1:]
    false_pos = int((~vis & pred_vis).sum())
    jaccard: dict[int, float | None] = {}
    for thr in THRESHOLDS:
        correct = pred_vis & _within(pred[1:], gt[1:], thr)
        true_pos = int((vis & correct).sum())
        false_neg = int((vis & ~correct).sum())
        denom = true_pos + false_neg + false_pos
        jaccard[thr] = true_pos / denom if denom else None
    defined = [v for v in jaccard.values() if v is not None]
    return (_mean(defined) if defined else None), jaccard


def _flow_errors(pred_flow: np.ndarray, gt_flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred_flow, dtype=np.float64)
    gt = np.asarray(gt_flow, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[0] != 2:
        msg = f"流場形狀不一致: 預測 {pred.shape}，真值 {gt.shape}（應為 [2,H,W]）"
        raise DimensionError(msg)
    dx, dy = pred[0] - gt[0], pred[1] - gt[1]
    epe = np.sqrt(dx * dx + dy * dy)
    magnitude = np.sqrt(gt[0] * gt[0] + gt[1] * gt[1])
    return epe, magnitude


def _valid(mask: np.ndarray | None, shape: tuple[int, ...]) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    valid = np.asarray(mask, dtype=bool)
    if valid.shape != shape:
        msg = f"有效遮罩形狀 {valid.shape} 與流場 {shape} 不一致"
        raise DimensionError(msg)
    return valid


def flow_metrics(
    pred_flow: np.ndarray, gt_flow: np.ndarray, valid_mask: np.ndarray | None = None
) -> tuple[float | None, float | None, float | None]:
    """(EPE, Fl-all, 1px)；遮罩為空時全部為 None。

    Fl-all 的離群條件為 EPE > 3 px 且 EPE > 5%·‖f‖。
    """
    epe, magnitude = _flow_errors(pred_flow, gt_flow)
    valid = _valid(valid_mask, epe.shape)
    count = int(valid.sum())
    if count == 0:
        return None, None, None
    errors = epe[valid]
    outliers = (errors > FL_ABS_PIXELS) & (errors > FL_REL * magnitude[valid])
    return (
        math.fsum(errors.tolist()) / count,
        int(outliers.sum()) / count,
        int((errors > 1.0).sum()) / count,
    )


def epe_by_magnitude(
    pred_flow: np.ndarray,
    gt_flow: np.ndarray,
    bin_edges: Sequence[float],
    valid_mask: np.ndarray | None = None,
) -> MagnitudeReport:
    """依 ‖f‖ 分組的平均 EPE；區間為 [e_i, e_{i+1})，最後一組包含右端點。

    Raises:
        UsageError: 邊界少於 2 個或非嚴格遞增
    """
    edges = [float(e) for e in bin_edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:], strict=False)):
        msg = f"分組邊界必須嚴格遞增且至少 2 個: {edges}"
        raise UsageError(msg)
    epe, magnitude = _flow_errors(pred_flow, gt_flow)
    valid = _valid(valid_mask, epe.shape)
    errors, mags = epe[valid], magnitude[valid]

    bins = []
    binned = 0
    last = len(edges) - 2
    for i in range(len(edges) - 1):
        lo, hi = edges[i], edges[i + 1]
        upper = mags <= hi if i == last else mags < hi
        members = errors[(mags >= lo) & upper]
        count = int(members.size)
        binned += count
        mean = math.fsum(members.tolist()) / count if count else None
        bins.append(MagnitudeBin(lo, hi, count, mean))
    return MagnitudeReport(bins, int(errors.size) - binned)


def epe_trend_slope(bins: Sequence[MagnitudeBin]) -> float | None:
    """以最小平方直線擬合各非空分組中心的 EPE，返回斜率；少於兩組時為 None。"""
    populated = [b for b in bins if b.epe is not None]
    if len(populated) < 2:
        return None
    centres = np.array([b.centre for b in populated])
    values = np.array([b.epe for b in populated])
    slope, _ = np.polyfit(centres, values, 1)
    return float(slope)


def stationary_baseline(gt: GroundTruth, num_frames: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """u ≡ 0 的預測：每格都停在查詢點，並預測為可見。"""
    frames = gt.tracks.shape[0] if num_frames is None else num_frames
    queries = np.asarray(gt.query_points, dtype=np.float64)
    tracks = np.broadcast_to(queries[None], (frames, *queries.shape)).copy()
    return tracks, np.ones((frames, queries.shape[0]))


def evaluate_tracks(
    pred_tracks: np.ndarray,
    pred_vis_prob: np.ndarray,
    gt_tracks: np.ndarray,
    gt_vis: np.ndarray,
    height: int,
    width: int,
) -> MetricReport:
    """在評估座標中計算 δ_avg、OA、AJ。"""
    pred = to_eval_frame(pred_tracks, height, width)
    target = to_eval_frame(gt_tracks, height, width)
    d_avg, deltas = delta_avg(pred, target, gt_vis)
    aj, jaccard = average_jaccard(pred, pred_vis_prob, target, gt_vis)
    return MetricReport(
        delta_avg=d_avg,
        delta=deltas,
        occlusion_accuracy=occlusion_accuracy(pred_vis_prob, gt_vis),
        average_jaccard=aj,
        jaccard=jaccard,
        num_points=int(np.asarray(gt_vis).shape[1]),
        num_visible=int(np.asarray(gt_vis, dtype=bool)[1:].sum()),
    )


def _weighted(values: list[tuple[float | None, int]]) -> float | None:
    pairs = [(v, n) for v, n in values if v is not None and n > 0]
    total = sum(n for _, n in pairs)
    if total == 0:
        return None
    return math.fsum(v * n for v, n in pairs) / total


def aggregate_reports(reports: Sequence[MetricReport]) -> MetricReport:
    """以每段的點數加權平均各指標。"""
    if not reports:
        return MetricReport()

    def combine(getter: Any) -> float | None:
        return _weighted([(getter(r), r.num_points) for r in reports])

    iterations = {r.iterations for r in reports}
    return MetricReport(
        delta_avg=combine(lambda r: r.delta_avg),
        delta={thr: combine(lambda r, t=thr: r.delta.get(t)) for thr in THRESHOLDS},
        occlusion_accuracy=combine(lambda r: r.occlusion_accuracy),
        average_jaccard=combine(lambda r: r.average_jaccard),
        jaccard={thr: combine(lambda r, t=thr: r.jaccard.get(t)) for thr in THRESHOLDS},
        epe=combine(lambda r: r.epe),
        fl_all=combine(lambda r: r.fl_all),
        one_px=combine(lambda r: r.one_px),
        num_points=sum(r.num_points for r in reports),
        num_visible=sum(r.num_visible for r in reports),
        iterations=iterations.pop() if len(iterations) == 1 else None,
    )


def _cell(value: float | None) -> str:
    return "-" if value is None else f"{100.0 * value:.1f}"


def format_table(rows: Sequence[tuple[str, MetricReport]]) -> str:
    """對齊的文字表格，欄位 AJ、δ_avg、OA（×100）。"""
    header = ("name", "AJ", "δ_avg", "OA", "K", "points")
    body = [
        (
            name,
            _cell(r.average_jaccard),
            _cell(r.delta_avg),
            _cell(r.occlusion_accuracy),
            "-" if r.iterations is None else str(r.iterations),
            str(r.num_points),
        )
        for name, r in rows
    ]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = []
    for row in [header, *body]:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:], strict=True)]
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"
