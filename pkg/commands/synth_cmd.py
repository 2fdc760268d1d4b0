"""synth 子命令：產生合成資料集（WTV1 片段 + manifest.json）"""

from __future__ import annotations

import argparse
import sys

from commands._shared import build_config, echo_config
from utils.errors import ConfigError
from utils.synthdata import write_dataset


def run(args: argparse.Namespace) -> int:
    overrides = {
        "scene.height": args.height,
        "scene.width": args.width,
        "scene.frames_min": args.frames,
        "scene.frames_max": args.frames,
        "scene.sprites_min": args.sprites,
        "scene.sprites_max": args.sprites,
        "scene.query_mode": args.query_mode,
    }
    config = build_config(args, "synth", overrides)
    if args.clips < 0 or args.heldout < 0:
        msg = f"--clips 與 --heldout 不可為負（收到 {args.clips}, {args.heldout}）"
        raise ConfigError(msg)
    echo_config(config)
    manifest = write_dataset(config.out, config.scene, args.clips, args.heldout, threads=config.threads)
    splits = manifest["splits"]
    sys.stdout.write(
        f"dataset {config.out}: train {len(splits['train'])} clips, heldout {len(splits['heldout'])} clips\n"
    )
    return 0


def setup(subparsers: argparse._SubParsersAction, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("synth", parents=[common], help="產生合成資料集")
    parser.add_argument("--clips", type=int, default=100, help="訓練片段數")
    parser.add_argument("--heldout", type=int, default=0, help="保留評估片段數")
    parser.add_argument("--frames", type=int, help="每段影格數 T+1（同時設定上下限）")
    parser.add_argument("--height", type=int, help="畫布高度")
    parser.add_argument("--width", type=int, help="畫布寬度")
    parser.add_argument("--sprites", type=int, help="每段精靈數（同時設定上下限）")
    parser.add_argument("--query-mode", choices=("dense", "sparse"), help="查詢點模式")
    parser.set_defaults(handler=run)
