"""子命令共用的旗標與設定處理"""

from __future__ import annotations

import argparse
import dataclasses
import json
import pathlib
from typing import TYPE_CHECKING, Any

from loguru import logger

from utils.errors import ConfigError
from utils.misc import atomic_write_text
from utils.run_config import ABLATIONS, PATCH_FOR_STRIDE, UPSAMPLERS, ModelConfig, RunConfig
from utils.startup import default_out_dir, resolve_thread_count
from utils.synthdata import generate_clip, read_clip
from utils.training import load_checkpoint

if TYPE_CHECKING:
    import os
    from collections.abc import Mapping

    from utils.synthdata import GroundTruth, VideoClip

MODEL_FLAG_KEYS = {
    "stride_ratio": "model.stride_ratio",
    "ablate": "model.ablate",
    "upsampler": "model.upsampler",
}


def common_parser() -> argparse.ArgumentParser:
    """所有子命令共用的旗標：--config、--seed、--threads、--out、--log-level。"""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="JSON 設定檔；旗標會覆寫檔案中的值")
    parent.add_argument("--seed", type=int, help="亂數種子（預設 0）")
    parent.add_argument("--threads", type=int, help="執行緒數（預設讀取 WARPTRACK_THREADS，否則 1）")
    parent.add_argument("--out", help="輸出目錄")
    parent.add_argument("--log-level", help="日誌等級（TRACE/DEBUG/INFO/...）")
    return parent


def add_model_flags(parser: argparse.ArgumentParser, *, iterations_key: str | None = "model.iterations") -> None:
    parser.add_argument("--iters", type=int, help="精修迭代次數 K")
    parser.add_argument("--stride-ratio", type=int, choices=sorted(PATCH_FOR_STRIDE), help="索引步長 s′")
    parser.add_argument("--ablate", choices=ABLATIONS, help="消融變體")
    parser.add_argument("--upsampler", choices=UPSAMPLERS, help="上採樣器")
    parser.set_defaults(iterations_key=iterations_key)


def model_overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides = {key: getattr(args, attr, None) for attr, key in MODEL_FLAG_KEYS.items()}
    if getattr(args, "iterations_key", None):
        overrides[args.iterations_key] = getattr(args, "iters", None)
    return overrides


def parse_int_list(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        msg = f"無法解析整數列表 {text!r}"
        raise ConfigError(msg) from e
    if not values:
        msg = f"整數列表 {text!r} 是空的"
        raise ConfigError(msg)
    return values


def parse_float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        msg = f"無法解析數值列表 {text!r}"
        raise ConfigError(msg) from e


def build_config(
    args: argparse.Namespace, command: str, overrides: Mapping[str, Any] | None = None
) -> RunConfig:
    """預設值 ← --config ← 旗標，並填入命令名稱、輸出目錄與執行緒數。"""
    merged: dict[str, Any] = {"seed": args.seed, "threads": args.threads, "out": args.out}
    merged.update(overrides or {})
    config = RunConfig.from_sources(args.config, merged)
    config.command = command
    config.out = config.out or str(pathlib.Path(default_out_dir()) / command)
    config.threads = resolve_thread_count(config.threads)
    return config


def echo_config(config: RunConfig) -> pathlib.Path:
    """把有效設定寫到 <out>/config.json 並記錄雜湊；該檔可直接作為 --config 重現執行。"""
    path = pathlib.Path(config.out) / "config.json"
    atomic_write_text(path, config.to_json())
    logger.info(
        "✅ 有效設定已寫入 {path}（雜湊 {digest}）", path=str(path), digest=config.config_hash()[:12]
    )
    logger.debug(f"[CLI] effective config\n{config.to_json()}")
    return path


def write_json(path: str | os.PathLike[str], data: Any) -> pathlib.Path:
    return atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def model_config_for(config: RunConfig, checkpoint: str | None, args: argparse.Namespace) -> ModelConfig:
    """推論用的模型設定：有檢查點時以檢查點記錄為準，明確指定且不一致的結構旗標會被拒絕。

    Raises:
        ConfigError: 旗標與檢查點的模型結構不一致
    """
    if checkpoint is None:
        return config.model
    recorded = load_checkpoint(checkpoint).config.get("model", {})
    try:
        model = ModelConfig(**recorded)
    except TypeError as e:
        msg = f"檢查點的模型設定不合法: {e}"
        raise ConfigError(msg) from e
    for attr, key in MODEL_FLAG_KEYS.items():
        flag = getattr(args, attr, None)
        field_name = key.split(".", 1)[1]
        if flag is not None and flag != getattr(model, field_name):
            msg = f"--{attr.replace('_', '-')} {flag} 與檢查點的 {field_name}={getattr(model, field_name)} 不一致"
            raise ConfigError(msg)
    model.validate()
    config.model = dataclasses.replace(model)
    return model


def load_or_generate_clip(path: str | None, config: RunConfig) -> tuple[VideoClip, GroundTruth]:
    """讀取 WTV1 片段；未指定時以 --seed 即時產生。"""
    if path is not None:
        return read_clip(path)
    return generate_clip(config.scene, config.seed)
