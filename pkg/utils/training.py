"""訓練模組

目標函數：
    L = Σ_k γ^(K-k) · [ L_track^k + λ_v · BCE(v^k, vis) + λ_τ · BCE(τ^k, 𝟙[‖x̂^k - x‖ <= r_τ]) ]
L_track 是逐點位移誤差的 Huber 損失，遮擋點以 λ_occ 降權；第 0 格不列入任何損失項。

最佳化器為 AdamW（解耦權重衰減），學習率先線性暖身再餘弦衰減到 0。
批次內每個元素在各自的影子參數上計算梯度，依批次順序歸約，因此結果與執行緒數無關。
"""

from __future__ import annotations

import json
import math
import pathlib
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
from loguru import logger

from utils import autodiff as ad
from utils import functional as fn
from utils.errors import ConfigError, DimensionError, NumericError, TrainingError, UsageError
from utils.metrics import MetricReport, aggregate_reports, evaluate_tracks, stationary_baseline
from utils.misc import atomic_write_bytes, atomic_write_text
from utils.params import ParamStore
from utils.run_config import OptimConfig
from utils.startup import parallel_map
from utils.synthdata import generate_clip, load_split, read_clip, read_manifest, split_seed, temporal_augment
from utils.warp_head import init_model_params, track
from utils.wire_format import CHECKPOINT_MAGIC, pack_container, unpack_container

if TYPE_CHECKING:
    import os
    from collections.abc import Sequence

    from utils.autodiff import Tensor
    from utils.run_config import LossWeights, ModelConfig, RunConfig
    from utils.synthdata import GroundTruth, SceneSpec, VideoClip
    from utils.warp_head import TrackResult

CHECKPOINT_NAME = "checkpoint.wtc"
LOG_NAME = "train_log.jsonl"
PREDICTORS = ("model", "gt", "stationary")


# 損失
def supervision_mask(gt: GroundTruth, canvas: tuple[int, int], margin: float) -> np.ndarray:
    """真值位置落在畫布外擴 margin 像素範圍內的 (t, p)，[(T+1),N] 布林。"""
    height, width = canvas
    x, y = gt.tracks[..., 0], gt.tracks[..., 1]
    return (
        (x >= -0.5 - margin)
        & (x <= width - 0.5 + margin)
        & (y >= -0.5 - margin)
        & (y <= height - 0.5 + margin)
    )


def _iteration_weights(count: int, gamma: float, iterations: int | None) -> list[float]:
    if count == 0:
        msg = "損失需要至少一次迭代的預測"
        raise UsageError(msg)
    if iterations is not None and iterations != count:
        msg = f"預測列表有 {count} 次迭代，但設定為 K={iterations}"
        raise UsageError(msg)
    return [gamma ** (count - 1 - k) for k in range(count)]


def track_loss(
    pred_tracks: Sequence[Tensor],
    gt: GroundTruth,
    weights: LossWeights,
    canvas: tuple[int, int],
    iterations: int | None = None,
) -> Tensor:
    """逐迭代加權的 Huber 位移損失。

    Args:
        pred_tracks: 每次迭代在查詢點上的預測位置，各為 [(T+1),N,2]
        gt: 真值
        weights: 損失權重
        canvas: (H, W)
        iterations: 預期的 K；與列表長度不符時報錯

    Returns:
        純量損失

    Raises:
        UsageError: K 不一致
        DimensionError: 預測形狀與真值不一致
    """
    factors = _iteration_weights(len(pred_tracks), weights.gamma, iterations)
    mask = supervision_mask(gt, canvas, weights.margin)[1:]
    point_weight = np.where(gt.visibility[1:], 1.0, weights.occluded_weight) * mask
    scale = 1.0 / max(int(mask.sum()), 1)

    total = None
    for factor, pred in zip(factors, pred_tracks, strict=True):
        if pred.shape != gt.tracks.shape:
            msg = f"預測軌跡 {pred.shape} 與真值 {gt.tracks.shape} 形狀不一致"
            raise DimensionError(msg)
        target = gt.tracks[1:].astype(pred.dtype)
        residual = ad.vector_norm(pred[1:] - target, axis=-1)
        per_point = fn.huber(residual, weights.huber_delta) * point_weight.astype(pred.dtype)
        term = ad.tsum(per_point) * (scale * factor)
        total = term if total is None else total + term
    return total


def confidence_target(pred: np.ndarray, gt_tracks: np.ndarray, radius: float) -> np.ndarray:
    """𝟙[‖x̂ - x‖ <= radius]，以 float64 計算，作為常數目標。"""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(gt_tracks, dtype=np.float64)
    err = np.sqrt((diff * diff).sum(axis=-1))
    return (err <= radius).astype(np.float64)


def vis_conf_loss(
    v_list: Sequence[Tensor],
    tau_list: Sequence[Tensor],
    pred_tracks: Sequence[Tensor],
    gt: GroundTruth,
    weights: LossWeights,
    iterations: int | None = None,
) -> Tensor:
    """逐迭代加權的可見性 BCE 與信心 BCE。

    信心目標由每次迭代的預測重新計算，不對指示函數傳遞梯度。可見性與信心在所有點上都受監督。
    """
    factors = _iteration_weights(len(v_list), weights.gamma, iterations)
    if not len(v_list) == len(tau_list) == len(pred_tracks):
        msg = f"v/τ/軌跡列表長度不一致: {len(v_list)}, {len(tau_list)}, {len(pred_tracks)}"
        raise UsageError(msg)
    vis_target = gt.visibility[1:].astype(np.float64)

    total = None
    for factor, v, tau, pred in zip(factors, v_list, tau_list, pred_tracks, strict=True):
        conf_target = confidence_target(pred.data[1:], gt.tracks[1:], weights.confidence_radius)
        bce_v = ad.mean(fn.binary_cross_entropy(v[1:], vis_target))
        bce_tau = ad.mean(fn.binary_cross_entropy(tau[1:], conf_target))
        term = (bce_v * weights.visibility_weight + bce_tau * weights.confidence_weight) * factor
        total = term if total is None else total + term
    return total


@dataclass(slots=True)
class LossBreakdown:
    total: Tensor
    track: float
    vis_conf: float

    def as_dict(self) -> dict[str, float]:
        return {"loss": self.total.item(), "track": self.track, "vis_conf": self.vis_conf}


def compute_losses(
    result: TrackResult, gt: GroundTruth, weights: LossWeights, canvas: tuple[int, int]
) -> LossBreakdown:
    """在查詢點上取樣每次迭代的輸出並計算總損失。"""
    tracks, vis, conf = [], [], []
    for k in range(result.iterations):
        x, v, tau = result.at_queries(gt.query_points, k)
        tracks.append(x)
        vis.append(v)
        conf.append(tau)
    l_track = track_loss(tracks, gt, weights, canvas, result.iterations)
    l_vis = vis_conf_loss(vis, conf, tracks, gt, weights, result.iterations)
    return LossBreakdown(l_track + l_vis, l_track.item(), l_vis.item())


# 最佳化器
@dataclass(slots=True)
class OptimState:
    """AdamW moments keyed by parameter name."""

    config: OptimConfig
    total_steps: int
    step: int = 0
    skipped: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def lr_at(step: int, state: OptimState) -> float:
    """線性暖身到 base，再以 0.5·base·(1 + cos(π·progress)) 衰減；step >= total 時為 0。"""
    cfg = state.config
    base, warmup, total = cfg.lr, cfg.warmup_steps, state.total_steps
    if step >= total:
        return 0.0
    if warmup > 0 and step < warmup:
        return base * step / warmup
    progress = (step - warmup) / max(total - warmup, 1)
    return 0.5 * base * (1.0 + math.cos(math.pi * progress))


def optimizer_step(
    params: ParamStore,
    grads: dict[str, np.ndarray],
    state: OptimState,
    step: int | None = None,
) -> bool:
    """就地執行一步 AdamW。

    Args:
        params: 參數（就地更新）
        grads: 與參數同名同形的梯度
        state: 最佳化器狀態
        step: 排程使用的 1 起算步數；省略時為 state.step + 1

    Returns:
        有任何梯度不是有限值時略過此步並返回 False
    """
    schedule_step = state.step + 1 if step is None else step
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            logger.warning("⚠️ 參數 {name} 的梯度含非有限值，略過第 {step} 步", name=name, step=schedule_step)
            return False

    cfg = state.config
    lr = lr_at(schedule_step, state)
    state.step += 1
    t = state.step
    correction1 = 1.0 - cfg.beta1**t
    correction2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = grads[name].astype(p.dtype, copy=False)
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
        update += cfg.weight_decay * p.data
        np.subtract(p.data, lr * update, out=p.data)
    return True


# 檢查點
@dataclass(slots=True)
class Checkpoint:
    params: dict[str, np.ndarray]
    optim: OptimState
    step: int
    config: dict[str, Any]
    config_hash: str


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """WTC1：meta（步數、設定、設定雜湊、最佳化器純量）加上 param/、adam_m/、adam_v/ 張量。"""
    meta = {
        "format": "WTC1",
        "step": ckpt.step,
        "config_hash": ckpt.config_hash,
        "config": ckpt.config,
        "optimizer": {
            "step": ckpt.optim.step,
            "skipped": ckpt.optim.skipped,
            "total_steps": ckpt.optim.total_steps,
        },
    }
    tensors = [(f"param/{name}", ckpt.params[name]) for name in sorted(ckpt.params)]
    tensors += [(f"adam_m/{name}", ckpt.optim.m[name]) for name in sorted(ckpt.optim.m)]
    tensors += [(f"adam_v/{name}", ckpt.optim.v[name]) for name in sorted(ckpt.optim.v)]
    return pack_container(CHECKPOINT_MAGIC, meta, tensors)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    """Raises: WireFormatError（格式錯誤）、ConfigError（設定內容不合法）。"""
    meta, tensors = unpack_container(buf, CHECKPOINT_MAGIC)
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for key, array in tensors.items():
        prefix, _, name = key.partition("/")
        if prefix not in groups:
            msg = f"檢查點含有未知的張量 {key}"
            raise ConfigError(msg)
        groups[prefix][name] = array
    try:
        config = dict(meta["config"])
        optim_cfg = OptimConfig(**config["optim"])
        optimizer = meta["optimizer"]
        state = OptimState(
            optim_cfg,
            int(optimizer["total_steps"]),
            int(optimizer["step"]),
            int(optimizer["skipped"]),
            groups["adam_m"],
            groups["adam_v"],
        )
        return Checkpoint(groups["param"], state, int(meta["step"]), config, str(meta["config_hash"]))
    except (KeyError, TypeError, ValueError) as e:
        msg = f"檢查點標頭不完整: {e}"
        raise ConfigError(msg) from e


def save_checkpoint(path: str | os.PathLike[str], ckpt: Checkpoint) -> pathlib.Path:
    written = atomic_write_bytes(path, encode_checkpoint(ckpt))
    logger.debug(f"[TRAIN] checkpoint step {ckpt.step} -> {written}")
    return written


def load_checkpoint(path: str | os.PathLike[str]) -> Checkpoint:
    return decode_checkpoint(pathlib.Path(path).read_bytes())


def load_model(path: str | os.PathLike[str], cfg: ModelConfig) -> ParamStore:
    """從檢查點建立推論用的參數。

    Raises:
        ConfigError: 檢查點參數與 cfg 描述的模型不一致
    """
    ckpt = load_checkpoint(path)
    store = init_model_params(cfg, 0)
    store.load_state(ckpt.params)
    logger.debug(f"[TRAIN] loaded {len(store)} tensors from {path} (step {ckpt.step})")
    return store


def model_config_from_checkpoint(path: str | os.PathLike[str]) -> dict[str, Any]:
    """檢查點內記錄的 model 區段。"""
    return dict(load_checkpoint(path).config.get("model", {}))


# 資料
def derive_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def batch_seeds(seed: int, step: int, batch_size: int) -> list[int]:
    """第 step 步（1 起算）各批次元素的種子。"""
    return [derive_seed(seed, 1, step, i) for i in range(batch_size)]


class ClipSource:
    """訓練與保留評估片段的來源：資料集目錄或即時產生。"""

    def __init__(self, scene: SceneSpec, dataset: str | os.PathLike[str] | None = None) -> None:
        self.scene = scene
        self.root = pathlib.Path(dataset) if dataset is not None else None
        self._train_files: list[str] = []
        self._heldout_count = 0
        if self.root is not None:
            manifest = read_manifest(self.root)
            self._train_files = [e["file"] for e in manifest["splits"].get("train", [])]
            self._heldout_count = len(manifest["splits"].get("heldout", []))
            if not self._train_files:
                msg = f"資料集 {self.root} 沒有訓練片段"
                raise ConfigError(msg)

    def training_clip(self, seed: int, augment: bool = False) -> tuple[VideoClip, GroundTruth]:
        if self.root is not None:
            rel = self._train_files[seed % len(self._train_files)]
            clip, gt = read_clip(self.root / rel)
        else:
            clip, gt = generate_clip(self.scene, seed)
        if augment and clip.num_frames >= 3:
            clip, gt = temporal_augment(clip, gt, derive_seed(seed, 3))
        return clip, gt

    def heldout(self, count: int) -> list[tuple[VideoClip, GroundTruth]]:
        """保留評估片段；資料集不足時以 heldout 分割種子補足。"""
        clips: list[tuple[VideoClip, GroundTruth]] = []
        if self.root is not None and self._heldout_count:
            clips = load_split(self.root, "heldout", count)
        for i in range(len(clips), count):
            clips.append(generate_clip(self.scene, split_seed(self.scene.seed, "heldout", i)))
        return clips


# 評估
def predict_clip(
    store: ParamStore,
    cfg: ModelConfig,
    clip: VideoClip,
    query_points: np.ndarray,
    iterations: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """推論：返回查詢點上的 (軌跡, 可見機率, 信心, K)。"""
    result = track(store, clip.frames, cfg, iterations)
    tracks, vis, conf = result.at_queries(query_points)
    return tracks.data, vis.data, conf.data, result.iterations


def evaluate_clips(
    clips: Sequence[tuple[VideoClip, GroundTruth]],
    *,
    predictor: str = "model",
    store: ParamStore | None = None,
    cfg: ModelConfig | None = None,
    iterations: int | None = None,
    threads: int = 1,
) -> list[MetricReport]:
    """對每個片段計算 MetricReport。

    Args:
        clips: (片段, 真值) 列表
        predictor: model（需要 store 與 cfg）、gt（真值當預測）或 stationary（u ≡ 0）
        store: 模型參數
        cfg: 模型設定
        iterations: 覆寫評估時的 K
        threads: 平行評估的執行緒數

    Raises:
        UsageError: predictor 不合法或缺少模型
    """
    if predictor not in PREDICTORS:
        msg = f"predictor 必須是 {PREDICTORS} 之一，收到 {predictor!r}"
        raise UsageError(msg)
    if predictor == "model" and (store is None or cfg is None):
        msg = "model 預測器需要參數與模型設定"
        raise UsageError(msg)

    def _evaluate(item: tuple[VideoClip, GroundTruth]) -> MetricReport:
        clip, gt = item
        k = None
        if predictor == "model":
            tracks, vis, _, k = predict_clip(store, cfg, clip, gt.query_points, iterations)
        elif predictor == "gt":
            tracks, vis = gt.tracks, gt.visibility.astype(np.float64)
        else:
            tracks, vis = stationary_baseline(gt)
        report = evaluate_tracks(tracks, vis, gt.tracks, gt.visibility, clip.height, clip.width)
        report.iterations = k
        return report

    return parallel_map(_evaluate, clips, threads)


def monitor_loss(
    store: ParamStore,
    config: RunConfig,
    clips: Sequence[tuple[VideoClip, GroundTruth]],
    threads: int = 1,
) -> float:
    """固定探測批次上的平均總損失（不建立計算圖）。"""

    def _loss(item: tuple[VideoClip, GroundTruth]) -> float:
        clip, gt = item
        result = track(store, clip.frames, config.model)
        return compute_losses(result, gt, config.loss, (clip.height, clip.width)).total.item()

    values = parallel_map(_loss, clips, threads)
    return math.fsum(values) / max(len(values), 1)


# 訓練迴圈
@dataclass(slots=True)
class ElementResult:
    seed: int
    grads: dict[str, np.ndarray] | None
    losses: dict[str, float] | None
    error: str | None = None


@dataclass(slots=True)
class TrainOutcome:
    checkpoint_path: pathlib.Path
    log_path: pathlib.Path
    step: int
    store: ParamStore
    report: MetricReport | None = None
    records: list[dict[str, Any]] = field(default_factory=list)


def _element(
    store: ParamStore, config: RunConfig, source: ClipSource, seed: int
) -> ElementResult:
    shadow = store.shadow()
    clip, gt = source.training_clip(seed, config.train.augment)
    try:
        with ad.Tape():
            result = track(shadow, clip.frames, config.model)
            losses = compute_losses(result, gt, config.loss, (clip.height, clip.width))
            values = losses.as_dict()
            if not math.isfinite(values["loss"]):
                return ElementResult(seed, None, values, "loss 非有限值")
            ad.backward(losses.total)
    except NumericError as e:
        return ElementResult(seed, None, None, str(e))
    return ElementResult(seed, shadow.grads(), values)


def _read_log(path: pathlib.Path, upto: int) -> list[dict[str, Any]]:
    if not path.is_file():
        return []
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            record = json.loads(line)
            if record.get("step", 0) <= upto:
                records.append(record)
    return records


def _write_log(path: pathlib.Path, records: list[dict[str, Any]]) -> None:
    atomic_write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _dump_nonfinite(
    out_dir: pathlib.Path, step: int, lr: float, results: list[ElementResult]
) -> pathlib.Path:
    payload = {
        "step": step,
        "lr": lr,
        "batch_seeds": [r.seed for r in results],
        "offending_seeds": [r.seed for r in results if r.grads is None],
        "elements": [{"seed": r.seed, "losses": r.losses, "error": r.error} for r in results],
    }
    return atomic_write_text(out_dir / f"nonfinite_step{step}.json", json.dumps(payload, indent=2) + "\n")


def make_checkpoint(store: ParamStore, state: OptimState, step: int, config: RunConfig) -> Checkpoint:
    return Checkpoint(store.state(), state, step, config.semantic_dict(), config.config_hash())


def train(
    config: RunConfig,
    out_dir: str | os.PathLike[str],
    *,
    resume: str | os.PathLike[str] | None = None,
    threads: int = 1,
) -> TrainOutcome:
    """訓練模型並寫出檢查點與 JSON-lines 日誌。

    Args:
        config: 已驗證的執行設定
        out_dir: 輸出目錄
        resume: 續訓用的檢查點；其設定雜湊必須與 config 一致
        threads: 批次元素並行的執行緒數

    Returns:
        TrainOutcome

    Raises:
        ConfigError: 續訓時設定雜湊不一致
        TrainingError: 出現非有限的損失
    """
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = config.train
    store = init_model_params(config.model, config.seed)
    state = OptimState(config.optim, tcfg.steps)
    start = 0

    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config_hash != config.config_hash():
            msg = f"檢查點設定雜湊 {ckpt.config_hash[:12]} 與目前設定 {config.config_hash()[:12]} 不一致，拒絕續訓"
            raise ConfigError(msg)
        store.load_state(ckpt.params)
        state = ckpt.optim
        start = ckpt.step
        logger.info("✅ 從第 {step} 步續訓（{path}）", step=start, path=str(resume))

    source = ClipSource(config.scene, tcfg.dataset)
    heldout = source.heldout(tcfg.eval_clips) if tcfg.eval_every > 0 and tcfg.eval_clips > 0 else []
    monitor = [source.training_clip(derive_seed(config.seed, 4, i)) for i in range(tcfg.monitor_clips)]

    log_path = out / LOG_NAME
    ckpt_path = out / CHECKPOINT_NAME
    records = _read_log(log_path, start) if resume is not None else []
    report: MetricReport | None = None

    def _evaluate(step: int, record: dict[str, Any]) -> None:
        nonlocal report
        if monitor:
            record["monitor_loss"] = monitor_loss(store, config, monitor, threads)
        if heldout:
            report = aggregate_reports(
                evaluate_clips(heldout, store=store, cfg=config.model, threads=threads)
            )
            record["eval"] = report.to_dict()
            logger.info(
                "✅ 第 {step} 步評估：AJ {aj}、δ_avg {delta}、OA {oa}",
                step=step,
                aj=_pct(report.average_jaccard),
                delta=_pct(report.delta_avg),
                oa=_pct(report.occlusion_accuracy),
            )

    if start == 0 and tcfg.eval_every > 0:
        record: dict[str, Any] = {"step": 0, "lr": 0.0}
        _evaluate(0, record)
        records.append(record)
        _write_log(log_path, records)

    last = tcfg.steps if tcfg.stop_after is None else min(tcfg.steps, tcfg.stop_after)
    step = start
    started = time.perf_counter()
    for step in range(start + 1, last + 1):
        seeds = batch_seeds(config.seed, step, tcfg.batch_size)
        lr = lr_at(step, state)
        accum = {name: np.zeros_like(p.data) for name, p in store.items()}

        def _reduce(_index: int, result: ElementResult) -> None:
            if tcfg.fast_reduce and result.grads is not None:
                for name, g in result.grads.items():
                    accum[name] += g

        results = parallel_map(
            lambda s: _element(store, config, source, s), seeds, threads, on_complete=_reduce
        )
        if any(r.grads is None for r in results):
            dump = _dump_nonfinite(out, step, lr, results)
            bad = [r.seed for r in results if r.grads is None]
            logger.error("❌ 第 {step} 步出現非有限損失，已寫出診斷檔 {path}", step=step, path=str(dump))
            msg = f"第 {step} 步出現非有限損失"
            raise TrainingError(msg, step=step, batch_seeds=bad, dump_path=str(dump))

        if not tcfg.fast_reduce:
            for result in results:
                for name, g in result.grads.items():
                    accum[name] += g
        inv = 1.0 / len(results)
        for g in accum.values():
            g *= inv
        applied = optimizer_step(store, accum, state, step)

        losses = {
            key: math.fsum(r.losses[key] for r in results) * inv for key in results[0].losses
        }
        record = {}
        if tcfg.log_every and (step % tcfg.log_every == 0 or step == last):
            record = {"step": step, "lr": lr, "skipped": not applied, **losses}
            logger.debug(
                f"[TRAIN] step {step}/{tcfg.steps} lr {lr:.3e} loss {losses['loss']:.4f} "
                f"({time.perf_counter() - started:.1f}s)"
            )
        if tcfg.eval_every and step % tcfg.eval_every == 0:
            record.setdefault("step", step)
            record.setdefault("lr", lr)
            _evaluate(step, record)
        if record:
            records.append(record)
            _write_log(log_path, records)
        if tcfg.checkpoint_every and step % tcfg.checkpoint_every == 0 and step != last:
            save_checkpoint(ckpt_path, make_checkpoint(store, state, step, config))

    save_checkpoint(ckpt_path, make_checkpoint(store, state, step, config))
    if not log_path.exists():
        _write_log(log_path, records)
    logger.info("✅ 訓練完成於第 {step} 步，檢查點 {path}", step=step, path=str(ckpt_path))
    return TrainOutcome(ckpt_path, log_path, step, store, report, records)


def _pct(value: float | None) -> str:
    return "-" if value is None else f"{100.0 * value:.1f}"
