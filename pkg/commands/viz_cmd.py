"""viz 子命令：把軌跡畫在片段上，每格輸出一張 PPM"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from commands._shared import build_config, echo_config, load_or_generate_clip
from utils.errors import UsageError
from utils.image_io import OCCLUDED_INTENSITY, write_overlays
from utils.warp_head import read_tracks_json

QUERY_TOLERANCE = 1e-3


def run(args: argparse.Namespace) -> int:
    config = build_config(args, "viz")
    config.paths["tracks"] = args.tracks
    if args.clip is not None:
        config.paths["clip"] = args.clip
    echo_config(config)

    clip, gt = load_or_generate_clip(args.clip, config)
    tracks, vis, _, _ = read_tracks_json(args.tracks)
    if tracks.shape[0] != clip.num_frames:
        msg = f"軌跡有 {tracks.shape[0]} 格，但片段有 {clip.num_frames} 格"
        raise UsageError(msg)
    if tracks.shape[1] != gt.num_points:
        msg = f"軌跡有 {tracks.shape[1]} 個點，但片段有 {gt.num_points} 個查詢點"
        raise UsageError(msg)
    # 軌跡第 0 格就是查詢點
    if not np.allclose(tracks[0], gt.query_points, atol=QUERY_TOLERANCE):
        msg = "軌跡第 0 格與片段的查詢點不一致，可能對應到不同片段"
        raise UsageError(msg)
    written = write_overlays(config.out, clip.frames, tracks, vis, radius=args.radius)
    sys.stdout.write(
        f"wrote {len(written)} frames to {config.out} (occluded at {OCCLUDED_INTENSITY:.0%})\n"
    )
    return 0


def setup(subparsers: argparse._SubParsersAction, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("viz", parents=[common], help="輸出軌跡疊圖")
    parser.add_argument("--tracks", required=True, help="track 子命令輸出的 tracks.json")
    parser.add_argument("--clip", help="WTV1 片段；省略時以 --seed 產生")
    parser.add_argument("--radius", type=int, default=1, help="點的半徑（像素）")
    parser.set_defaults(handler=run)
