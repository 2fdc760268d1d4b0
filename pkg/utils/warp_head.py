"""扭曲式追蹤頭模組

不使用 cost volume，而是反覆「依目前位移扭曲目標影格特徵 → 時空 Transformer 更新」：

    u⁰ = 0,  h⁰_t = LN(φ(F₀ ⊕ F_t))
    G_t(p) = sample(F_t, p + u_t(p))
    z_t = G_t ⊕ F₀ ⊕ u_t ⊕ h_t
    h′ = Transformer(z),  u′ = u + h′ W_u,  u′₀ = 0
    v = σ(h W_v + b_v),  τ = σ(h W_τ + b_τ)

跨影格的配對只發生在 warp 的雙線性取樣；記憶體與 (T+1)·N·(2C+D_h+2) 成正比。
查詢格 j 的中心在像素座標 s′·j + (s′-1)/2。
"""

from __future__ import annotations

import json
import math
import pathlib
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from loguru import logger

from utils import autodiff as ad
from utils import functional as fn
from utils.autodiff import Tensor
from utils.encoder import FeatureField, encode, init_encoder_params
from utils.errors import DimensionError, UsageError
from utils.misc import atomic_write_text
from utils.params import Initializer, ParamStore
from utils.synthdata import query_grid

if TYPE_CHECKING:
    import os

    from utils.run_config import ModelConfig


@dataclass(slots=True)
class BlockParams:
    kind: str
    ln1_g: Tensor
    ln1_b: Tensor
    q_w: Tensor
    k_w: Tensor
    v_w: Tensor
    o_w: Tensor
    o_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    mlp1_w: Tensor
    mlp1_b: Tensor
    mlp2_w: Tensor
    mlp2_b: Tensor


@dataclass(slots=True)
class HeadParams:
    """View over the ``head.*`` entries of a ParamStore."""

    phi_w: Tensor
    phi_b: Tensor
    phi_ln_g: Tensor
    phi_ln_b: Tensor
    patch_w: Tensor
    patch_b: Tensor
    blocks: list[BlockParams]
    norm_g: Tensor
    norm_b: Tensor
    unpatch_w: Tensor
    unpatch_b: Tensor
    w_u: Tensor
    w_v: Tensor
    b_v: Tensor
    w_tau: Tensor
    b_tau: Tensor

    @classmethod
    def from_store(cls, store: ParamStore, cfg: ModelConfig) -> HeadParams:
        blocks = []
        for i, kind in enumerate(cfg.blocks):
            prefix = f"head.block{i}"
            blocks.append(
                BlockParams(
                    kind,
                    *(
                        store[f"{prefix}.{name}"]
                        for name in (
                            "ln1.g", "ln1.b", "attn.q.w", "attn.k.w", "attn.v.w", "attn.o.w",
                            "attn.o.b", "ln2.g", "ln2.b", "mlp1.w", "mlp1.b", "mlp2.w", "mlp2.b",
                        )
                    ),
                )
            )
        params = cls(
            store["head.phi.w"],
            store["head.phi.b"],
            store["head.phi_ln.g"],
            store["head.phi_ln.b"],
            store["head.patch.w"],
            store["head.patch.b"],
            blocks,
            store["head.norm.g"],
            store["head.norm.b"],
            store["head.unpatch.w"],
            store["head.unpatch.b"],
            store["head.w_u"],
            store["head.w_v"],
            store["head.b_v"],
            store["head.w_tau"],
            store["head.b_tau"],
        )
        d_h = cfg.hidden_dim
        if params.w_u.shape != (d_h, 2) or params.w_v.shape != (d_h, 1) or params.w_tau.shape != (d_h, 1):
            msg = f"讀出矩陣形狀不符: W_u {params.w_u.shape}, W_v {params.w_v.shape}, W_τ {params.w_tau.shape}"
            raise DimensionError(msg)
        return params


@dataclass(slots=True)
class TrackField:
    """Dense displacement u: [(T+1),N,2] over the H′×W′ query grid (row-major)."""

    u: Tensor
    grid_shape: tuple[int, int]
    stride: int

    def grid_points(self) -> np.ndarray:
        return query_grid(*self.grid_shape, self.stride)

    def positions(self) -> np.ndarray:
        """x_t(p) = p + u_t(p)，[(T+1),N,2]。"""
        return self.grid_points()[None] + self.u.data

    def sample(self, query_points: np.ndarray) -> Tensor:
        """在任意查詢座標上雙線性取樣位移（格點上精確），返回 [(T+1),Nq,2]。"""
        return sample_grid_field(self.u, self.grid_shape, self.stride, query_points)


@dataclass(slots=True)
class HiddenState:
    h: Tensor


@dataclass(slots=True)
class TrackResult:
    """Output of :func:`track`; per-iteration lists hold every refinement step."""

    track_field: TrackField
    visibility: Tensor
    confidence: Tensor
    u_list: list[Tensor]
    v_list: list[Tensor]
    tau_list: list[Tensor]
    features: FeatureField
    hidden: HiddenState
    iterations: int = 0

    def at_queries(
        self, query_points: np.ndarray, iteration: int = -1
    ) -> tuple[Tensor, Tensor, Tensor]:
        """某次迭代在查詢點上的 (軌跡 [(T+1),Nq,2], 可見機率 [(T+1),Nq], 信心 [(T+1),Nq])。"""
        grid, stride = self.track_field.grid_shape, self.track_field.stride
        q = np.asarray(query_points, dtype=self.u_list[iteration].dtype)
        disp = sample_grid_field(self.u_list[iteration], grid, stride, q)
        tracks = disp + q[None]
        vis = sample_grid_field(_column(self.v_list[iteration]), grid, stride, q)
        conf = sample_grid_field(_column(self.tau_list[iteration]), grid, stride, q)
        return tracks, ad.reshape(vis, vis.shape[:2]), ad.reshape(conf, conf.shape[:2])

    def dense_flow(self, height: int, width: int, iteration: int = -1) -> np.ndarray:
        """第 1 格相對第 0 格的逐像素位移 [2,H,W]（雙影格流場模式）。"""
        ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        pixels = np.stack([xs, ys], axis=-1).reshape(-1, 2).astype(self.u_list[iteration].dtype)
        grid, stride = self.track_field.grid_shape, self.track_field.stride
        disp = sample_grid_field(self.u_list[iteration], grid, stride, pixels)
        return disp.data[1].reshape(height, width, 2).transpose(2, 0, 1).copy()


def _column(values: Tensor) -> Tensor:
    return ad.reshape(values, (*values.shape, 1))


def to_feature_coords(points: Tensor | np.ndarray, stride: int) -> Tensor | np.ndarray:
    """像素座標 → 特徵格座標：(x - (s′-1)/2) / s′。"""
    centre = (stride - 1) / 2
    return (points - centre) * (1.0 / stride)


def sample_grid_field(
    values: Tensor, grid_shape: tuple[int, int], stride: int, query_points: np.ndarray
) -> Tensor:
    """在查詢點上取樣定義於查詢格的逐格量。

    Args:
        values: [(T+1),N,K]，N = H′·W′ 列優先
        grid_shape: (H′, W′)
        stride: s′
        query_points: [Nq,2] 像素座標

    Returns:
        [(T+1),Nq,K]
    """
    frames = values.shape[0]
    gh, gw = grid_shape
    maps = ad.rearrange(values, "t (h w) k -> t k h w", h=gh, w=gw)
    coords = to_feature_coords(np.asarray(query_points, dtype=np.float64), stride)
    batch = Tensor(np.broadcast_to(coords[None], (frames, *coords.shape)), dtype=values.dtype)
    return fn.bilinear_sample(maps, batch)


def init_head_params(store: ParamStore, cfg: ModelConfig, init: Initializer) -> None:
    """在 store 中建立 head.* 參數。"""
    c, d_h, width = cfg.feature_channels, cfg.hidden_dim, cfg.token_width
    patch_in = cfg.effective_patch**2 * cfg.token_channels
    patch_out = cfg.effective_patch**2 * d_h
    mlp = cfg.mlp_ratio * width
    residual_std = 1.0 / math.sqrt(width) / math.sqrt(2 * len(cfg.blocks))

    store.add("head.phi.w", init.conv(d_h, 2 * c, 1))
    store.add("head.phi.b", init.zeros(d_h))
    store.add("head.phi_ln.g", init.ones(d_h))
    store.add("head.phi_ln.b", init.zeros(d_h))
    store.add("head.patch.w", init.linear(patch_in, width))
    store.add("head.patch.b", init.zeros(width))
    for i in range(len(cfg.blocks)):
        prefix = f"head.block{i}"
        store.add(f"{prefix}.ln1.g", init.ones(width))
        store.add(f"{prefix}.ln1.b", init.zeros(width))
        for name in ("q", "k", "v"):
            store.add(f"{prefix}.attn.{name}.w", init.linear(width, width))
        store.add(f"{prefix}.attn.o.w", init.linear(width, width, std=residual_std))
        store.add(f"{prefix}.attn.o.b", init.zeros(width))
        store.add(f"{prefix}.ln2.g", init.ones(width))
        store.add(f"{prefix}.ln2.b", init.zeros(width))
        store.add(f"{prefix}.mlp1.w", init.linear(width, mlp))
        store.add(f"{prefix}.mlp1.b", init.zeros(mlp))
        store.add(f"{prefix}.mlp2.w", init.linear(mlp, width, std=residual_std))
        store.add(f"{prefix}.mlp2.b", init.zeros(width))
    store.add("head.norm.g", init.ones(width))
    store.add("head.norm.b", init.zeros(width))
    store.add("head.unpatch.w", init.linear(width, patch_out))
    store.add("head.unpatch.b", init.zeros(patch_out))
    store.add("head.w_u", init.linear(d_h, 2, std=0.01))
    store.add("head.w_v", init.linear(d_h, 1))
    store.add("head.b_v", init.zeros(1))
    store.add("head.w_tau", init.linear(d_h, 1))
    store.add("head.b_tau", init.zeros(1))


def init_model_params(cfg: ModelConfig, seed: int) -> ParamStore:
    """建立編碼器與追蹤頭的全部參數；相同 (cfg, seed) 產生相同數值。"""
    cfg.validate()
    store = ParamStore()
    init = Initializer(np.random.default_rng(seed))
    init_encoder_params(store, cfg, init)
    init_head_params(store, cfg, init)
    logger.debug(f"[HEAD] initialised {len(store)} tensors, {store.num_parameters()} parameters")
    return store


def feature_tokens(features: FeatureField) -> Tensor:
    """[(T+1),C,H′,W′] → [(T+1),N,C]。"""
    return ad.rearrange(features.features, "t c h w -> t (h w) c")


def init_state(features: FeatureField, params: HeadParams) -> tuple[TrackField, HiddenState]:
    """u⁰ = 0；h⁰_t = LN(φ(F₀ ⊕ F_t))，φ 為 1×1 卷積。"""
    f = features.features
    frames = f.shape[0]
    f0 = ad.broadcast_to(f[0:1], f.shape)
    pair = ad.concat([f0, f], axis=1)
    projected = fn.conv2d(pair, params.phi_w, params.phi_b)
    h = fn.layer_norm(
        ad.rearrange(projected, "t c h w -> t (h w) c"), params.phi_ln_g, params.phi_ln_b
    )
    gh, gw = features.grid_shape
    u = Tensor(np.zeros((frames, gh * gw, 2)), dtype=f.dtype)
    return TrackField(u, (gh, gw), features.stride), HiddenState(h)


def warp(features: FeatureField, u: Tensor) -> Tensor:
    """G_t(p) = sample(F_t, p + u_t(p))，返回 [(T+1),N,C]。"""
    gh, gw = features.grid_shape
    grid = query_grid(gh, gw, features.stride).astype(u.dtype)
    centre = (features.stride - 1) / 2
    coords = (u + (grid - centre)[None]) * (1.0 / features.stride)
    return fn.bilinear_sample(features.features, coords)


def assemble_tokens(g: Tensor, f0: Tensor, u: Tensor, h: Tensor) -> Tensor:
    """z_t = G_t ⊕ F₀ ⊕ u_t ⊕ h_t，沿通道串接成 [(T+1),N,2C+D_h+2]。"""
    frames, n, _ = g.shape
    if f0.shape != (n, g.shape[2]) or u.shape != (frames, n, 2) or h.shape[:2] != (frames, n):
        msg = f"assemble_tokens 形狀不一致: G {g.shape}, F0 {f0.shape}, u {u.shape}, h {h.shape}"
        raise DimensionError(msg)
    f0_rows = ad.broadcast_to(ad.reshape(f0, (1, *f0.shape)), (frames, *f0.shape))
    return ad.concat([g, f0_rows, u, h], axis=-1)


def spatial_embedding(grid_h: int, grid_w: int, width: int) -> np.ndarray:
    """patch 網格上的二維正弦位置編碼 [grid_h·grid_w, width]。"""
    half = width // 2
    rows = fn.sinusoidal_embedding(np.arange(grid_h), half)
    cols = fn.sinusoidal_embedding(np.arange(grid_w), width - half)
    emb = np.concatenate(
        [np.repeat(rows, grid_w, axis=0), np.tile(cols, (grid_h, 1))], axis=1
    )
    return emb


def _attention(x: Tensor, block: BlockParams, heads: int) -> Tensor:
    normed = fn.layer_norm(x, block.ln1_g, block.ln1_b)
    q = ad.matmul(normed, block.q_w)
    k = ad.matmul(normed, block.k_w)
    v = ad.matmul(normed, block.v_w)
    mixed = fn.softmax_attention(q, k, v, heads=heads)
    return fn.linear(mixed, block.o_w, block.o_b)


def _mlp(x: Tensor, block: BlockParams) -> Tensor:
    normed = fn.layer_norm(x, block.ln2_g, block.ln2_b)
    return fn.linear(ad.gelu(fn.linear(normed, block.mlp1_w, block.mlp1_b)), block.mlp2_w, block.mlp2_b)


def _run_block(x: Tensor, block: BlockParams, heads: int) -> Tensor:
    x = x + _attention(x, block, heads)
    return x + _mlp(x, block)


def transformer(
    tokens: Tensor, params: HeadParams, cfg: ModelConfig, grid_shape: tuple[int, int]
) -> Tensor:
    """patch 化 → 交錯的空間/時間注意力區塊 → 還原成逐格隱藏狀態 [(T+1),N,D_h]。"""
    gh, gw = grid_shape
    p = cfg.effective_patch
    if gh % p or gw % p:
        msg = f"查詢格 {gh}x{gw} 無法被 patch {p} 整除"
        raise DimensionError(msg)
    ph_count, pw_count = gh // p, gw // p
    frames = tokens.shape[0]

    x = ad.rearrange(
        tokens, "t (gh ph gw pw) c -> t (gh gw) (ph pw c)", gh=ph_count, ph=p, gw=pw_count, pw=p
    )
    x = fn.linear(x, params.patch_w, params.patch_b)
    x = x + spatial_embedding(ph_count, pw_count, cfg.token_width).astype(x.dtype)
    if cfg.temporal_embedding:
        temporal = fn.sinusoidal_embedding(np.arange(frames), cfg.token_width)
        x = x + temporal[:, None, :].astype(x.dtype)

    for block in params.blocks:
        if block.kind == "S":
            x = _run_block(x, block, cfg.heads)
        elif cfg.ablate != "no-temporal":
            xt = ad.rearrange(x, "t p c -> p t c")
            x = ad.rearrange(_run_block(xt, block, cfg.heads), "p t c -> t p c")

    x = fn.layer_norm(x, params.norm_g, params.norm_b)
    x = fn.linear(x, params.unpatch_w, params.unpatch_b)
    return ad.rearrange(
        x, "t (gh gw) (ph pw c) -> t (gh ph gw pw) c", gh=ph_count, gw=pw_count, ph=p, pw=p
    )


def update(
    track_field: TrackField,
    tokens: Tensor,
    params: HeadParams,
    cfg: ModelConfig,
) -> tuple[TrackField, HiddenState]:
    """一次精修：h′ = Transformer(z)；u′ = u + h′ W_u（乘上 delta_scale），第 0 格歸零。"""
    h_new = transformer(tokens, params, cfg, track_field.grid_shape)
    delta = ad.matmul(h_new, params.w_u)
    if cfg.delta_scale != 1.0:
        delta = delta * cfg.delta_scale
    frames = track_field.u.shape[0]
    frame_mask = np.ones((frames, 1, 1), dtype=track_field.u.dtype)
    frame_mask[0] = 0
    u_new = (track_field.u + delta) * frame_mask
    return TrackField(u_new, track_field.grid_shape, track_field.stride), HiddenState(h_new)


def readout(hidden: HiddenState, params: HeadParams) -> tuple[Tensor, Tensor]:
    """v = σ(h W_v + b_v)、τ = σ(h W_τ + b_τ)，各為 [(T+1),N]。"""
    h = hidden.h
    v = ad.sigmoid(fn.linear(h, params.w_v, params.b_v))
    tau = ad.sigmoid(fn.linear(h, params.w_tau, params.b_tau))
    return ad.reshape(v, v.shape[:2]), ad.reshape(tau, tau.shape[:2])


def head_iteration(
    features: FeatureField,
    f_tokens: Tensor,
    track_field: TrackField,
    hidden: HiddenState,
    params: HeadParams,
    cfg: ModelConfig,
) -> tuple[TrackField, HiddenState, Tensor, Tensor]:
    """一次完整迭代：warp → assemble → update → readout。no-warp 消融直接使用未扭曲的特徵。"""
    g = f_tokens if cfg.ablate == "no-warp" else warp(features, track_field.u)
    tokens = assemble_tokens(g, f_tokens[0], track_field.u, hidden.h)
    track_field, hidden = update(track_field, tokens, params, cfg)
    v, tau = readout(hidden, params)
    return track_field, hidden, v, tau


def track(
    store: ParamStore,
    frames: np.ndarray,
    cfg: ModelConfig,
    iterations: int | None = None,
) -> TrackResult:
    """encode → init_state → K × (warp → assemble → update → readout)。

    Args:
        store: 模型參數
        frames: [(T+1),3,H,W]，值域 [0,1]
        cfg: 模型設定
        iterations: 覆寫 K；single-pass 消融一律為 1

    Returns:
        TrackResult，含每次迭代的 u、v、τ

    Raises:
        UsageError: K < 1 或影格數少於 2
    """
    k = cfg.effective_iterations if iterations is None else iterations
    if cfg.ablate == "single-pass":
        k = 1
    if k < 1:
        msg = f"迭代次數必須 >= 1，收到 {k}"
        raise UsageError(msg)
    if frames.shape[0] < 2:
        msg = f"追蹤至少需要 2 格（查詢格加一個目標格），收到 {frames.shape[0]}"
        raise UsageError(msg)

    params = HeadParams.from_store(store, cfg)
    features = encode(store, frames, cfg)
    field_k, hidden = init_state(features, params)
    f_tokens = feature_tokens(features)
    u_list: list[Tensor] = []
    v_list: list[Tensor] = []
    tau_list: list[Tensor] = []
    for step in range(k):
        field_k, hidden, v, tau = head_iteration(features, f_tokens, field_k, hidden, params, cfg)
        u_list.append(field_k.u)
        v_list.append(v)
        tau_list.append(tau)
        logger.trace(f"[HEAD] iteration {step + 1}/{k} mean |u| {np.abs(field_k.u.data).mean():.4f}")

    return TrackResult(field_k, v_list[-1], tau_list[-1], u_list, v_list, tau_list, features, hidden, k)


def write_tracks_json(
    path: str | os.PathLike[str],
    tracks: np.ndarray,
    visibility: np.ndarray,
    confidence: np.ndarray,
    stride: int,
) -> pathlib.Path:
    """輸出 {"T","N","stride","tracks","visibility","confidence"}；tracks 以 t 為主序攤平。"""
    frames, n, _ = tracks.shape
    payload = {
        "T": frames - 1,
        "N": n,
        "stride": stride,
        "tracks": np.asarray(tracks, dtype=np.float64).reshape(-1, 2).tolist(),
        "visibility": np.asarray(visibility, dtype=np.float64).reshape(-1).tolist(),
        "confidence": np.asarray(confidence, dtype=np.float64).reshape(-1).tolist(),
    }
    return atomic_write_text(path, json.dumps(payload, separators=(",", ":")) + "\n")


def read_tracks_json(path: str | os.PathLike[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """讀回 (tracks [(T+1),N,2], visibility [(T+1),N], confidence [(T+1),N], stride)。

    Raises:
        UsageError: 欄位缺漏或長度與 T、N 不一致
    """
    data = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
    try:
        frames, n = int(data["T"]) + 1, int(data["N"])
        tracks = np.asarray(data["tracks"], dtype=np.float64).reshape(frames, n, 2)
        vis = np.asarray(data["visibility"], dtype=np.float64).reshape(frames, n)
        conf = np.asarray(data["confidence"], dtype=np.float64).reshape(frames, n)
        stride = int(data["stride"])
    except (KeyError, TypeError, ValueError) as e:
        msg = f"軌跡檔 {path} 格式不合法: {e}"
        raise UsageError(msg) from e
    return tracks, vis, conf, stride
