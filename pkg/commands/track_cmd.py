"""track 子命令：對單一片段輸出軌跡 JSON"""

from __future__ import annotations

import argparse
import pathlib
import sys

from commands._shared import (
    add_model_flags,
    build_config,
    echo_config,
    load_or_generate_clip,
    model_config_for,
    model_overrides,
    write_json,
)
from utils.metrics import evaluate_tracks, format_table
from utils.training import load_model, predict_clip
from utils.warp_head import init_model_params, write_tracks_json


def run(args: argparse.Namespace) -> int:
    config = build_config(args, "track", model_overrides(args))
    model_cfg = model_config_for(config, args.checkpoint, args)
    if args.clip is not None:
        config.paths["clip"] = args.clip
    echo_config(config)

    clip, gt = load_or_generate_clip(args.clip, config)
    if args.checkpoint is not None:
        store = load_model(args.checkpoint, model_cfg)
    else:
        store = init_model_params(model_cfg, config.seed)
    tracks, vis, conf, k = predict_clip(store, model_cfg, clip, gt.query_points, args.iters)

    out = pathlib.Path(config.out)
    path = write_tracks_json(out / "tracks.json", tracks, vis, conf, model_cfg.stride_ratio)
    report = evaluate_tracks(tracks, vis, gt.tracks, gt.visibility, clip.height, clip.width)
    report.iterations = k
    write_json(out / "track_report.json", report.to_dict())
    sys.stdout.write(f"tracks {path} (T={clip.T}, N={gt.num_points}, K={k})\n")
    sys.stdout.write(format_table([("clip", report)]))
    return 0


def setup(subparsers: argparse._SubParsersAction, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("track", parents=[common], help="追蹤單一片段")
    parser.add_argument("--checkpoint", help="WTC1 檢查點；省略時使用隨機初始化的模型")
    parser.add_argument("--clip", help="WTV1 片段；省略時以 --seed 產生")
    add_model_flags(parser, iterations_key=None)
    parser.set_defaults(handler=run)
