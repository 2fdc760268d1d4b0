"""bench 子命令：追蹤頭的時間與記憶體量測

- 時間：T ∈ {4,8,16} 的追蹤頭牆鐘時間與線性擬合，報告各點相對偏差
- 記憶體：一次迭代的最大單筆配置對照 (T+1)·N·(2C+D_h+2)，以及半徑 R 的等價 cost volume
"""

from __future__ import annotations

import argparse
import dataclasses
import pathlib
import sys

from loguru import logger

from commands._shared import (
    add_model_flags,
    build_config,
    echo_config,
    model_config_for,
    model_overrides,
    parse_int_list,
    write_json,
)
from utils.profiling import DEFAULT_FRAME_COUNTS, measure_head_memory, random_frames, time_head
from utils.training import load_model
from utils.warp_head import init_model_params


def run(args: argparse.Namespace) -> int:
    config = build_config(args, "bench", model_overrides(args))
    model_cfg = model_config_for(config, args.checkpoint, args)
    if args.iters is not None:
        model_cfg = dataclasses.replace(model_cfg, iterations=args.iters)
    echo_config(config)
    store = load_model(args.checkpoint, model_cfg) if args.checkpoint else init_model_params(model_cfg, config.seed)
    height, width = config.scene.height, config.scene.width
    counts = parse_int_list(args.frame_counts) or list(DEFAULT_FRAME_COUNTS)

    timing = time_head(store, model_cfg, height, width, counts, repeats=args.repeats, seed=config.seed)
    memory = [
        measure_head_memory(store, model_cfg, random_frames(t + 1, height, width, config.seed), args.radius)
        for t in counts
    ]

    lines = ["T   head ms   fit dev   largest/tokens   cost volume MB   tokens MB"]
    for t, seconds, dev, mem in zip(counts, timing.seconds, timing.deviations, memory, strict=True):
        lines.append(
            f"{t:<3} {seconds * 1000:9.1f} {100 * dev:8.1f}% {mem.largest_ratio:16.2f} "
            f"{mem.cost_volume_bytes / 2**20:16.2f} {mem.token_bytes / 2**20:11.2f}"
        )
    lines.append(f"slope {timing.slope * 1000:.2f} ms/frame, max deviation {100 * timing.max_deviation:.1f}%")
    sys.stdout.write("\n".join(lines) + "\n")

    write_json(
        pathlib.Path(config.out) / "bench.json",
        {"timing": timing.to_dict(), "memory": [m.to_dict() for m in memory]},
    )
    if timing.max_deviation >= 0.3:
        logger.warning("⚠️ 追蹤頭時間偏離線性擬合 {dev:.0%}", dev=timing.max_deviation)
    return 0


def setup(subparsers: argparse._SubParsersAction, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("bench", parents=[common], help="追蹤頭的時間與記憶體量測")
    parser.add_argument("--checkpoint", help="WTC1 檢查點；省略時使用隨機初始化的模型")
    parser.add_argument("--frame-counts", help="目標格數列表，預設 4,8,16")
    parser.add_argument("--repeats", type=int, default=3, help="每個 T 重複量測次數（取最小值）")
    parser.add_argument("--radius", type=int, default=4, help="對照用 cost volume 的搜尋半徑")
    add_model_flags(parser, iterations_key=None)
    parser.set_defaults(handler=run)
