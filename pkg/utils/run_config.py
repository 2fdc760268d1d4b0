"""執行設定模組

RunConfig 集合場景、模型、損失、最佳化與訓練設定。
來源優先順序：內建預設值 ← JSON 設定檔 ← 命令列旗標。
有效設定會回顯成 JSON，並以 SHA-256 雜湊保護續訓的一致性。
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import pathlib
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, TypeVar

from loguru import logger

from utils.errors import ConfigError
from utils.synthdata import SceneSpec

if TYPE_CHECKING:
    import os
    from collections.abc import Mapping

S = TypeVar("S")

# 索引步長 → 頭部 patch 邊長（以特徵格為單位）
PATCH_FOR_STRIDE = {2: 4, 4: 2, 8: 1, 16: 1}
ABLATIONS = ("no-temporal", "no-warp", "single-pass")
UPSAMPLERS = ("learned", "bilinear")


@dataclass(slots=True)
class ModelConfig:
    """Encoder and warp-head dimensions.

    backbone_channels is C_b (low-resolution features), feature_channels is C
    (after the upsampler), hidden_dim is D_h.
    """

    backbone_channels: int = 64
    feature_channels: int = 32
    hidden_dim: int = 64
    token_width: int = 128
    blocks: str = "SSTSST"
    heads: int = 4
    mlp_ratio: int = 4
    stride_ratio: int = 2
    patch: int | None = None
    iterations: int = 4
    backbone_stride: int = 8
    upsampler: str = "learned"
    ablate: str | None = None
    temporal_embedding: bool = True
    delta_scale: float = 1.0

    @property
    def effective_patch(self) -> int:
        return self.patch if self.patch is not None else PATCH_FOR_STRIDE[self.stride_ratio]

    @property
    def effective_iterations(self) -> int:
        return 1 if self.ablate == "single-pass" else self.iterations

    @property
    def token_channels(self) -> int:
        """2C + D_h + 2"""
        return 2 * self.feature_channels + self.hidden_dim + 2

    def validate(self) -> None:
        problems = []
        if self.stride_ratio not in PATCH_FOR_STRIDE:
            problems.append(f"stride_ratio 必須是 {sorted(PATCH_FOR_STRIDE)} 之一")
        if self.backbone_stride != 8:
            problems.append("backbone_stride 目前只支援 8")
        if self.patch is not None and self.patch < 1:
            problems.append("patch 必須 >= 1")
        if self.iterations < 1:
            problems.append(f"iterations 必須 >= 1，收到 {self.iterations}")
        if not self.blocks or set(self.blocks) - {"S", "T"}:
            problems.append(f"blocks 只能由 S 與 T 組成，收到 {self.blocks!r}")
        if self.token_width % self.heads:
            problems.append(f"token_width {self.token_width} 無法被 heads {self.heads} 整除")
        if self.upsampler not in UPSAMPLERS:
            problems.append(f"upsampler 必須是 {UPSAMPLERS} 之一")
        if self.ablate is not None and self.ablate not in ABLATIONS:
            problems.append(f"ablate 必須是 {ABLATIONS} 之一")
        for name in ("backbone_channels", "feature_channels", "hidden_dim", "token_width", "heads", "mlp_ratio"):
            if getattr(self, name) < 1:
                problems.append(f"{name} 必須 >= 1")
        if problems:
            msg = "; ".join(problems)
            raise ConfigError(msg)


@dataclass(slots=True)
class LossWeights:
    gamma: float = 0.8
    huber_delta: float = 6.0
    occluded_weight: float = 0.2
    visibility_weight: float = 1.0
    confidence_weight: float = 1.0
    confidence_radius: float = 12.0
    margin: float = 12.0

    def validate(self) -> None:
        if not 0 < self.gamma <= 1:
            msg = f"gamma 必須在 (0, 1]，收到 {self.gamma}"
            raise ConfigError(msg)
        if self.huber_delta <= 0 or self.confidence_radius <= 0 or self.margin < 0:
            msg = "huber_delta、confidence_radius 必須 > 0，margin 不可為負"
            raise ConfigError(msg)
        if min(self.occluded_weight, self.visibility_weight, self.confidence_weight) < 0:
            msg = "損失權重不可為負"
            raise ConfigError(msg)


@dataclass(slots=True)
class OptimConfig:
    lr: float = 5e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_steps: int = 200

    def validate(self) -> None:
        if self.lr <= 0 or self.weight_decay < 0 or self.eps <= 0 or self.warmup_steps < 0:
            msg = "lr、eps 必須 > 0；weight_decay、warmup_steps 不可為負"
            raise ConfigError(msg)
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            msg = "beta1、beta2 必須在 [0, 1)"
            raise ConfigError(msg)


@dataclass(slots=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 8
    augment: bool = True
    eval_every: int = 500
    eval_clips: int = 100
    monitor_clips: int = 4
    log_every: int = 50
    checkpoint_every: int = 1000
    stop_after: int | None = None
    fast_reduce: bool = False
    dataset: str | None = None

    def validate(self) -> None:
        if self.steps < 0 or self.batch_size < 1:
            msg = f"steps 不可為負、batch_size 必須 >= 1（收到 {self.steps}, {self.batch_size}）"
            raise ConfigError(msg)
        if min(self.eval_every, self.log_every, self.checkpoint_every) < 0:
            msg = "eval_every、log_every、checkpoint_every 不可為負"
            raise ConfigError(msg)
        if self.stop_after is not None and self.stop_after < 0:
            msg = "stop_after 不可為負"
            raise ConfigError(msg)


@dataclass(slots=True)
class RunConfig:
    """Effective configuration of one command invocation.

    The scene seed always equals ``seed``.
    """

    command: str = ""
    seed: int = 0
    threads: int | None = None
    out: str | None = None
    paths: dict[str, str] = field(default_factory=dict)
    scene: SceneSpec = field(default_factory=SceneSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        self.scene.seed = self.seed
        self.scene.validate()
        self.model.validate()
        self.loss.validate()
        self.optim.validate()
        self.train.validate()

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "seed": self.seed,
            "threads": self.threads,
            "out": self.out,
            "paths": dict(sorted(self.paths.items())),
            "scene": self.scene.to_dict(),
            "model": dataclasses.asdict(self.model),
            "loss": dataclasses.asdict(self.loss),
            "optim": dataclasses.asdict(self.optim),
            "train": dataclasses.asdict(self.train),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RunConfig:
        """從字典建立設定；未知的鍵會被拒絕。"""
        sections = {"scene", "model", "loss", "optim", "train"}
        scalars = {"command", "seed", "threads", "out", "paths"}
        unknown = set(data) - sections - scalars
        if unknown:
            msg = f"設定含有未知的鍵: {sorted(unknown)}"
            raise ConfigError(msg)
        config = cls()
        for key in scalars & set(data):
            setattr(config, key, dict(data[key]) if key == "paths" else data[key])
        if "scene" in data:
            config.scene = SceneSpec.from_dict(dict(data["scene"]))
        config.model = _section(ModelConfig, data.get("model", {}), "model")
        config.loss = _section(LossWeights, data.get("loss", {}), "loss")
        config.optim = _section(OptimConfig, data.get("optim", {}), "optim")
        config.train = _section(TrainConfig, data.get("train", {}), "train")
        return config

    @classmethod
    def from_sources(
        cls,
        json_path: str | os.PathLike[str] | None = None,
        overrides: Mapping[str, Any] | None = None,
    ) -> RunConfig:
        """依序套用預設值、JSON 設定檔與旗標覆寫，並驗證。

        Args:
            json_path: --config 指定的 JSON 檔
            overrides: 以點號路徑為鍵的覆寫值（例如 "model.iterations"），值為 None 的項目略過

        Raises:
            ConfigError: 檔案無法解析、鍵未知或值不合法
        """
        data: dict[str, Any] = {}
        if json_path is not None:
            path = pathlib.Path(json_path)
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                msg = f"無法讀取設定檔 {path}: {e}"
                raise ConfigError(msg) from e
            if not isinstance(data, dict):
                msg = f"設定檔 {path} 必須是 JSON 物件"
                raise ConfigError(msg)

        for dotted, value in (overrides or {}).items():
            if value is None:
                continue
            target = data
            *parents, leaf = dotted.split(".")
            for part in parents:
                target = target.setdefault(part, {})
            target[leaf] = value

        try:
            config = cls.from_dict(data)
        except TypeError as e:
            msg = f"設定值型別不合法: {e}"
            raise ConfigError(msg) from e
        config.validate()
        logger.debug(f"[CONFIG] effective config hash {config.config_hash()[:12]}")
        return config

    def semantic_dict(self) -> dict[str, Any]:
        """決定訓練結果的設定區段（不含 stop_after 與輸出路徑等執行細節）。"""
        train = dataclasses.asdict(self.train)
        train.pop("stop_after", None)
        return {
            "scene": self.scene.to_dict(),
            "model": dataclasses.asdict(self.model),
            "loss": dataclasses.asdict(self.loss),
            "optim": dataclasses.asdict(self.optim),
            "train": train,
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        """semantic_dict 正規 JSON 的 SHA-256。"""
        canonical = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _section(cls: type[S], values: Mapping[str, Any], name: str) -> S:
    known = {f.name for f in dataclasses.fields(cls)}  # type: ignore[arg-type]
    unknown = set(values) - known
    if unknown:
        msg = f"{name} 區段含有未知的鍵: {sorted(unknown)}"
        raise ConfigError(msg)
    return cls(**values)
