"""合成影片資料模組

產生帶有精確真值軌跡與遮擋資訊的精靈圖（sprite）影片。
每個圖層有固定深度，逐像素做深度測試合成；表面上任一點跟隨其圖層做剛體運動。

深度慣例：數值越小越靠近鏡頭。背景深度為 BACKGROUND_DEPTH，遮擋物 0.1·j，精靈 1 + k。
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import pathlib
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
from loguru import logger

from utils.errors import ConfigError, UsageError, WireFormatError
from utils.misc import atomic_write_bytes, atomic_write_text
from utils.startup import parallel_map
from utils.wire_format import VIDEO_MAGIC, pack_container, unpack_container

if TYPE_CHECKING:
    import os
    from collections.abc import Sequence

BACKGROUND_DEPTH = 1e9
MAX_SPEED = 12.0
TEXTURES = ("checker", "noise", "gradient")
MOTIONS = ("constant", "sinusoidal", "static")
SPLIT_CODES = {"train": 0, "heldout": 2}


@dataclass(slots=True)
class SceneSpec:
    """Parameters of the sprite scene generator (frames counts include frame 0)."""

    seed: int = 0
    height: int = 64
    width: int = 96
    frames_min: int = 8
    frames_max: int = 8
    sprites_min: int = 2
    sprites_max: int = 4
    size_min: int = 12
    size_max: int = 28
    textures: tuple[str, ...] = TEXTURES
    speed_max: float = 5.0
    sinusoidal_prob: float = 0.3
    occluders: int = 1
    background: str = "noise"
    query_mode: str = "dense"
    sparse_queries: int = 64
    query_stride: int = 2

    def validate(self) -> None:
        """檢查所有範圍是否合法。

        Raises:
            ConfigError: 任何欄位不合法
        """
        problems = []
        if self.height < 8 or self.width < 8:
            problems.append(f"畫布至少 8x8，收到 {self.height}x{self.width}")
        if self.frames_min < 2 or self.frames_max < self.frames_min:
            problems.append(f"影格數範圍不合法: [{self.frames_min}, {self.frames_max}]")
        if self.sprites_min < 1 or self.sprites_max < self.sprites_min:
            problems.append(f"精靈數量範圍不合法: [{self.sprites_min}, {self.sprites_max}]")
        if self.size_min < 2 or self.size_max < self.size_min:
            problems.append(f"精靈大小範圍不合法: [{self.size_min}, {self.size_max}]")
        if self.size_max > min(self.height, self.width):
            problems.append(f"精靈最大尺寸 {self.size_max} 超出畫布")
        if not 0 <= self.speed_max <= MAX_SPEED:
            problems.append(f"speed_max 必須在 [0, {MAX_SPEED}]，收到 {self.speed_max}")
        if not 0 <= self.sinusoidal_prob <= 1:
            problems.append(f"sinusoidal_prob 必須在 [0, 1]，收到 {self.sinusoidal_prob}")
        if self.occluders < 0:
            problems.append(f"occluders 不可為負，收到 {self.occluders}")
        if not self.textures or any(t not in TEXTURES for t in self.textures):
            problems.append(f"textures 必須是 {TEXTURES} 的非空子集，收到 {self.textures}")
        if self.background not in TEXTURES:
            problems.append(f"background 必須是 {TEXTURES} 之一，收到 {self.background}")
        if self.query_mode not in {"dense", "sparse"}:
            problems.append(f"query_mode 必須是 dense 或 sparse，收到 {self.query_mode}")
        if self.sparse_queries < 1:
            problems.append(f"sparse_queries 必須 >= 1，收到 {self.sparse_queries}")
        if self.query_stride < 1:
            problems.append(f"query_stride 必須 >= 1，收到 {self.query_stride}")
        if problems:
            msg = "; ".join(problems)
            raise ConfigError(msg)

    def to_dict(self) -> dict[str, Any]:
        data = dataclasses.asdict(self)
        data["textures"] = list(self.textures)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SceneSpec:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            msg = f"SceneSpec 未知欄位: {sorted(unknown)}"
            raise ConfigError(msg)
        values = dict(data)
        if "textures" in values:
            values["textures"] = tuple(values["textures"])
        return cls(**values)


@dataclass(slots=True)
class Layer:
    """A textured rectangle moving rigidly across the canvas.

    Attributes:
        texture: [3,h,w] colours in [0,1]
        origin: (x, y) of texture pixel (0, 0) at frame 0
        depth: smaller is nearer
        velocity: (vx, vy) in px/frame
        motion: "constant" (d = v t), "sinusoidal" (d = v/ω sin ωt) or "static"
        omega: angular frequency of the sinusoidal motion
    """

    texture: np.ndarray
    origin: tuple[float, float]
    depth: float
    velocity: tuple[float, float] = (0.0, 0.0)
    motion: str = "constant"
    omega: float = 0.0

    def __post_init__(self) -> None:
        if self.motion not in MOTIONS:
            msg = f"未知的運動模式: {self.motion}"
            raise UsageError(msg)
        if self.motion == "sinusoidal" and self.omega <= 0:
            msg = f"sinusoidal 運動需要 omega > 0，收到 {self.omega}"
            raise UsageError(msg)

    @property
    def size(self) -> tuple[int, int]:
        """(w, h)"""
        return self.texture.shape[2], self.texture.shape[1]

    def offset(self, t: float) -> np.ndarray:
        vel = np.asarray(self.velocity, dtype=np.float64)
        if self.motion == "static":
            return np.zeros(2)
        if self.motion == "sinusoidal":
            return vel / self.omega * math.sin(self.omega * t)
        return vel * t

    def local(self, t: float, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """畫布座標轉成圖層貼圖座標。"""
        dx, dy = self.offset(t)
        return xs - self.origin[0] - dx, ys - self.origin[1] - dy

    def covers(self, t: float, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        lx, ly = self.local(t, xs, ys)
        w, h = self.size
        return (lx >= -0.5) & (lx < w - 0.5) & (ly >= -0.5) & (ly < h - 0.5)


@dataclass(slots=True)
class VideoClip:
    """frames: [(T+1),3,H,W] float32 in [0,1]; frame 0 is the query frame."""

    frames: np.ndarray

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def T(self) -> int:  # noqa: N802
        return self.frames.shape[0] - 1

    @property
    def height(self) -> int:
        return self.frames.shape[2]

    @property
    def width(self) -> int:
        return self.frames.shape[3]


@dataclass(slots=True)
class GroundTruth:
    """tracks [(T+1),N,2] (x, y); visibility [(T+1),N] bool; query_points [N,2]."""

    tracks: np.ndarray
    visibility: np.ndarray
    query_points: np.ndarray
    owners: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def num_points(self) -> int:
        return self.query_points.shape[0]


def round_pixel(coords: np.ndarray) -> np.ndarray:
    """最近像素中心：floor(x + 0.5)。"""
    return np.floor(np.asarray(coords, dtype=np.float64) + 0.5).astype(np.int64)


def query_grid(grid_h: int, grid_w: int, stride: int = 2) -> np.ndarray:
    """以列優先順序返回 grid_h × grid_w 個格子中心 (stride·j + (stride-1)/2, stride·i + (stride-1)/2)。"""
    centre = (stride - 1) / 2
    ii, jj = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    return np.stack([stride * jj + centre, stride * ii + centre], axis=-1).reshape(-1, 2)


def sample_texture(texture: np.ndarray, lx: np.ndarray, ly: np.ndarray) -> np.ndarray:
    """在貼圖座標上雙線性取樣（邊界截斷），返回 [3, *lx.shape]。"""
    _, h, w = texture.shape
    x = np.clip(lx, 0, w - 1)
    y = np.clip(ly, 0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = x - x0
    wy = y - y0
    return (
        texture[:, y0, x0] * ((1 - wx) * (1 - wy))
        + texture[:, y0, x1] * (wx * (1 - wy))
        + texture[:, y1, x0] * ((1 - wx) * wy)
        + texture[:, y1, x1] * (wx * wy)
    )


def make_texture(kind: str, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """產生 [3,height,width] 的貼圖。"""
    if kind == "checker":
        cell = int(rng.integers(2, 7))
        colours = rng.random((2, 3))
        ii, jj = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        parity = ((ii // cell + jj // cell) % 2).astype(np.int64)
        return colours[parity].transpose(2, 0, 1)
    if kind == "noise":
        coarse = rng.random((3, height // 4 + 2, width // 4 + 2))
        ys, xs = np.meshgrid(np.arange(height) / 4.0, np.arange(width) / 4.0, indexing="ij")
        smooth = sample_texture(coarse, xs, ys)
        return np.clip(0.8 * smooth + 0.2 * rng.random((3, height, width)), 0.0, 1.0)
    if kind == "gradient":
        start, end = rng.random((2, 3))
        angle = rng.uniform(0, 2 * math.pi)
        ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        proj = xs * math.cos(angle) + ys * math.sin(angle)
        span = max(float(proj.max() - proj.min()), 1.0)
        ramp = (proj - proj.min()) / span
        base = start[:, None, None] * (1 - ramp) + end[:, None, None] * ramp
        return np.clip(base + 0.1 * rng.standard_normal((3, height, width)), 0.0, 1.0)
    msg = f"未知的貼圖種類: {kind}"
    raise ConfigError(msg)


def render_scene(
    layers: Sequence[Layer],
    background: np.ndarray,
    num_frames: int,
    height: int,
    width: int,
    query_points: np.ndarray,
) -> tuple[VideoClip, GroundTruth]:
    """以深度測試合成影格並計算查詢點的真值軌跡與可見性。

    查詢點的擁有者是第 0 格在其最近像素上的勝出圖層；背景上的點保持靜止。
    某點在第 t 格被遮擋，若且唯若其最近像素在畫布外，或該像素的勝出圖層嚴格更近。

    Args:
        layers: 前景圖層（深度需互不相同）
        background: [3,H,W] 靜態背景
        num_frames: 影格總數 T+1
        height: 畫布高度
        width: 畫布寬度
        query_points: [N,2] 第 0 格的查詢座標

    Returns:
        (VideoClip, GroundTruth)
    """
    depths = [layer.depth for layer in layers]
    if len(set(depths)) != len(depths):
        msg = f"圖層深度必須互不相同: {depths}"
        raise UsageError(msg)
    if background.shape != (3, height, width):
        msg = f"背景形狀應為 (3, {height}, {width})，收到 {background.shape}"
        raise UsageError(msg)

    ys, xs = np.meshgrid(
        np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij"
    )
    frames = np.empty((num_frames, 3, height, width), dtype=np.float32)
    zmaps = np.empty((num_frames, height, width), dtype=np.float64)
    owner_maps = np.empty((num_frames, height, width), dtype=np.int64)
    for t in range(num_frames):
        image = background.astype(np.float64)
        zbuf = np.full((height, width), BACKGROUND_DEPTH)
        owner = np.full((height, width), -1, dtype=np.int64)
        for index, layer in enumerate(layers):
            win = layer.covers(t, xs, ys) & (layer.depth < zbuf)
            if not win.any():
                continue
            lx, ly = layer.local(t, xs[win], ys[win])
            image[:, win] = sample_texture(layer.texture, lx, ly)
            zbuf[win] = layer.depth
            owner[win] = index
        frames[t] = image
        zmaps[t] = zbuf
        owner_maps[t] = owner

    queries = np.asarray(query_points, dtype=np.float32)
    q_pix = round_pixel(queries)
    in_canvas = (
        (q_pix[:, 0] >= 0) & (q_pix[:, 0] < width) & (q_pix[:, 1] >= 0) & (q_pix[:, 1] < height)
    )
    if not in_canvas.all():
        msg = "查詢點必須位於畫布內"
        raise UsageError(msg)
    owners = owner_maps[0, q_pix[:, 1], q_pix[:, 0]]
    owner_depth = np.array(
        [BACKGROUND_DEPTH if o < 0 else layers[o].depth for o in owners], dtype=np.float64
    )

    tracks64 = np.repeat(queries[None].astype(np.float64), num_frames, axis=0)
    for n, o in enumerate(owners):
        if o >= 0:
            for t in range(1, num_frames):
                tracks64[t, n] += layers[o].offset(t)
    tracks = tracks64.astype(np.float32)

    pix = round_pixel(tracks)
    inside = (
        (pix[..., 0] >= 0) & (pix[..., 0] < width) & (pix[..., 1] >= 0) & (pix[..., 1] < height)
    )
    px = np.clip(pix[..., 0], 0, width - 1)
    py = np.clip(pix[..., 1], 0, height - 1)
    t_idx = np.arange(num_frames)[:, None]
    nearer = zmaps[t_idx, py, px] < owner_depth[None]
    visibility = inside & ~nearer

    return VideoClip(frames), GroundTruth(tracks, visibility, queries, owners)


def _sample_layers(
    spec: SceneSpec, rng: np.random.Generator
) -> tuple[list[Layer], np.ndarray]:
    height, width = spec.height, spec.width
    layers: list[Layer] = []

    n_sprites = int(rng.integers(spec.sprites_min, spec.sprites_max + 1))
    ranks = rng.permutation(n_sprites)
    for k in range(n_sprites):
        w = int(rng.integers(spec.size_min, spec.size_max + 1))
        h = int(rng.integers(spec.size_min, spec.size_max + 1))
        kind = str(rng.choice(list(spec.textures)))
        texture = make_texture(kind, h, w, rng)
        origin = (float(rng.uniform(0, width - w)), float(rng.uniform(0, height - h)))
        speed = float(rng.uniform(0, spec.speed_max))
        angle = float(rng.uniform(0, 2 * math.pi))
        velocity = (speed * math.cos(angle), speed * math.sin(angle))
        if rng.random() < spec.sinusoidal_prob:
            motion, omega = "sinusoidal", float(rng.uniform(0.3, 1.2))
        else:
            motion, omega = "constant", 0.0
        layers.append(Layer(texture, origin, 1.0 + float(ranks[k]), velocity, motion, omega))

    for j in range(spec.occluders):
        if rng.random() < 0.5:
            w, h = int(rng.integers(6, 13)), height
            origin = (float(rng.uniform(0, width - w)), 0.0)
        else:
            w, h = width, int(rng.integers(6, 13))
            origin = (0.0, float(rng.uniform(0, height - h)))
        kind = str(rng.choice(list(spec.textures)))
        layers.append(Layer(make_texture(kind, h, w, rng), origin, 0.1 * (j + 1), motion="static"))

    background = make_texture(spec.background, height, width, rng)
    return layers, background


def clip_queries(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.query_stride
    grid = query_grid(spec.height // s, spec.width // s, s)
    if spec.query_mode == "dense":
        return grid
    count = min(spec.sparse_queries, grid.shape[0])
    picks = np.sort(rng.choice(grid.shape[0], size=count, replace=False))
    return grid[picks]


def generate_clip(spec: SceneSpec, seed: int | None = None) -> tuple[VideoClip, GroundTruth]:
    """依 spec 產生一個片段；seed 省略時使用 spec.seed。"""
    spec.validate()
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    num_frames = int(rng.integers(spec.frames_min, spec.frames_max + 1))
    layers, background = _sample_layers(spec, rng)
    queries = clip_queries(spec, rng)
    clip, gt = render_scene(layers, background, num_frames, spec.height, spec.width, queries)
    logger.trace(
        f"[SYNTH] clip seed={seed} frames={num_frames} layers={len(layers)} "
        f"visible={gt.visibility.mean():.3f}"
    )
    return clip, gt


def select_frames(
    clip: VideoClip, gt: GroundTruth, indices: Sequence[int] | np.ndarray
) -> tuple[VideoClip, GroundTruth]:
    """只保留指定影格（第一個必須是 0，遞增）。"""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size < 2 or idx[0] != 0 or np.any(np.diff(idx) <= 0) or idx[-1] >= clip.num_frames:
        msg = f"影格索引不合法: {idx.tolist()}"
        raise UsageError(msg)
    return (
        VideoClip(clip.frames[idx]),
        GroundTruth(gt.tracks[idx], gt.visibility[idx], gt.query_points, gt.owners),
    )


def temporal_augment(
    clip: VideoClip, gt: GroundTruth, seed: int, max_stride: int = 3
) -> tuple[VideoClip, GroundTruth]:
    """隨機影格率（步長）與隨機長度的時間增強。

    Raises:
        UsageError: 片段少於 3 格
    """
    if clip.num_frames < 3:
        msg = f"temporal_augment 需要至少 3 格，收到 {clip.num_frames}"
        raise UsageError(msg)
    rng = np.random.default_rng(seed)
    while True:
        stride = int(rng.integers(1, max_stride + 1))
        length = int(rng.integers(2, clip.num_frames + 1))
        indices = np.arange(0, clip.num_frames, stride)[:length]
        if indices.size >= 2:
            return select_frames(clip, gt, indices)


def encode_clip(clip: VideoClip, gt: GroundTruth) -> bytes:
    meta = {
        "T": clip.T,
        "H": clip.height,
        "W": clip.width,
        "C": 3,
        "N": gt.num_points,
    }
    return pack_container(
        VIDEO_MAGIC,
        meta,
        [
            ("frames", clip.frames.astype(np.float32)),
            ("tracks", gt.tracks.astype(np.float32)),
            ("visibility", gt.visibility.astype(np.uint8)),
            ("queries", gt.query_points.astype(np.float32)),
        ],
    )


def decode_clip(buf: bytes) -> tuple[VideoClip, GroundTruth]:
    """解析 WTV1 並檢查張量形狀與標頭一致。"""
    meta, tensors = unpack_container(buf, VIDEO_MAGIC)
    try:
        t, h, w, c, n = (int(meta[k]) for k in ("T", "H", "W", "C", "N"))
    except (KeyError, TypeError, ValueError) as e:
        msg = f"WTV1 標頭欄位不完整: {meta}"
        raise WireFormatError(msg, 0) from e
    expected = {
        "frames": (t + 1, c, h, w),
        "tracks": (t + 1, n, 2),
        "visibility": (t + 1, n),
        "queries": (n, 2),
    }
    for name, shape in expected.items():
        if name not in tensors or tensors[name].shape != shape:
            got = tensors[name].shape if name in tensors else None
            msg = f"WTV1 張量 {name} 形狀應為 {shape}，收到 {got}"
            raise WireFormatError(msg, 0)
    return (
        VideoClip(tensors["frames"]),
        GroundTruth(tensors["tracks"], tensors["visibility"].astype(bool), tensors["queries"]),
    )


def write_clip(path: str | os.PathLike[str], clip: VideoClip, gt: GroundTruth) -> pathlib.Path:
    return atomic_write_bytes(path, encode_clip(clip, gt))


def read_clip(path: str | os.PathLike[str]) -> tuple[VideoClip, GroundTruth]:
    return decode_clip(pathlib.Path(path).read_bytes())


def split_seed(seed: int, split: str, index: int) -> int:
    """每個片段的種子，由 (seed, split, index) 決定。"""
    state = np.random.SeedSequence([seed, SPLIT_CODES[split], index]).generate_state(1)
    return int(state[0])


def write_dataset(
    out_dir: str | os.PathLike[str],
    spec: SceneSpec,
    clips: int,
    heldout: int = 0,
    *,
    threads: int = 1,
) -> dict[str, Any]:
    """產生資料集目錄：train/、heldout/ 底下的 WTV1 片段與 manifest.json。

    Args:
        out_dir: 輸出目錄
        spec: 場景參數（spec.seed 為資料集種子）
        clips: 訓練片段數
        heldout: 保留評估片段數
        threads: 平行產生的執行緒數

    Returns:
        寫入的 manifest 內容
    """
    spec.validate()
    root = pathlib.Path(out_dir)
    jobs = [("train", i) for i in range(clips)] + [("heldout", i) for i in range(heldout)]

    def _make(job: tuple[str, int]) -> dict[str, Any]:
        split, index = job
        seed = split_seed(spec.seed, split, index)
        clip, gt = generate_clip(spec, seed)
        payload = encode_clip(clip, gt)
        rel = f"{split}/clip_{index:05d}.wtv"
        atomic_write_bytes(root / rel, payload)
        return {
            "file": rel,
            "seed": seed,
            "T": clip.T,
            "N": gt.num_points,
            "sha256": hashlib.sha256(payload).hexdigest(),
        }

    entries = parallel_map(_make, jobs, threads)
    manifest = {
        "format": "WTV1",
        "spec": spec.to_dict(),
        "splits": {
            "train": [e for e in entries if e["file"].startswith("train/")],
            "heldout": [e for e in entries if e["file"].startswith("heldout/")],
        },
    }
    atomic_write_text(root / "manifest.json", _dumps(manifest))
    logger.info(
        "✅ 資料集已寫入 {root}（訓練 {clips} 段，保留 {heldout} 段）",
        root=str(root),
        clips=clips,
        heldout=heldout,
    )
    return manifest


def _dumps(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def read_manifest(root: str | os.PathLike[str]) -> dict[str, Any]:
    """讀取資料集的 manifest.json。

    Raises:
        ConfigError: 目錄不是資料集
    """
    path = pathlib.Path(root) / "manifest.json"
    if not path.is_file():
        msg = f"{root} 不是資料集目錄（找不到 manifest.json）"
        raise ConfigError(msg)
    return json.loads(path.read_text(encoding="utf-8"))


def load_split(
    root: str | os.PathLike[str], split: str, limit: int | None = None
) -> list[tuple[VideoClip, GroundTruth]]:
    manifest = read_manifest(root)
    entries = manifest["splits"].get(split, [])
    if limit is not None:
        entries = entries[:limit]
    return [read_clip(pathlib.Path(root) / e["file"]) for e in entries]
