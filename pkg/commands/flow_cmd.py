"""flow 子命令：把兩張影像視為 T=1 的影片，輸出稠密光流

輸出 flow.wtt（[2,H,W]，第 0 通道為 x 位移）。提供 --gt 時另外輸出 EPE、Fl-all、1px
與依位移大小分組的 EPE。
"""

from __future__ import annotations

import argparse
import pathlib
import sys

import numpy as np
from loguru import logger

from commands._shared import (
    add_model_flags,
    build_config,
    echo_config,
    model_config_for,
    model_overrides,
    parse_float_list,
    write_json,
)
from utils.errors import UsageError
from utils.image_io import load_image, plot_epe_by_magnitude
from utils.metrics import epe_by_magnitude, flow_metrics
from utils.training import load_model
from utils.warp_head import init_model_params, track
from utils.wire_format import read_tensor, write_tensor

DEFAULT_BINS = "0,1,2,4,8,16,32"


def run(args: argparse.Namespace) -> int:
    config = build_config(args, "flow", model_overrides(args))
    model_cfg = model_config_for(config, args.checkpoint, args)
    config.paths.update({"frame_a": args.frame_a, "frame_b": args.frame_b})
    echo_config(config)

    first, second = load_image(args.frame_a), load_image(args.frame_b)
    if first.shape != second.shape:
        msg = f"兩張影像大小不一致: {first.shape} 與 {second.shape}"
        raise UsageError(msg)
    _, height, width = first.shape
    store = load_model(args.checkpoint, model_cfg) if args.checkpoint else init_model_params(model_cfg, config.seed)
    result = track(store, np.stack([first, second]), model_cfg, args.iters)
    flow = result.dense_flow(height, width)

    out = pathlib.Path(config.out)
    flow_path = write_tensor(out / "flow.wtt", flow.astype(np.float32))
    sys.stdout.write(f"flow {flow_path} shape {list(flow.shape)} (K={result.iterations})\n")

    if args.gt is not None:
        gt = read_tensor(args.gt)
        if gt.shape != flow.shape:
            msg = f"真值流場 {gt.shape} 與輸出 {flow.shape} 形狀不一致"
            raise UsageError(msg)
        epe, fl_all, one_px = flow_metrics(flow, gt)
        bins = epe_by_magnitude(flow, gt, parse_float_list(args.bins))
        write_json(
            out / "flow_metrics.json",
            {"epe": epe, "fl_all": fl_all, "one_px": one_px, "by_magnitude": bins.to_dict()},
        )
        logger.info("✅ EPE {epe:.3f} px、Fl-all {fl:.3f}、1px {px:.3f}", epe=epe, fl=fl_all, px=one_px)
        sys.stdout.write(f"EPE {epe:.4f}  Fl-all {100 * fl_all:.2f}%  1px {100 * one_px:.2f}%\n")
        if args.plot is not None:
            plot_epe_by_magnitude(args.plot, bins)
    return 0


def setup(subparsers: argparse._SubParsersAction, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("flow", parents=[common], help="雙影格光流模式")
    parser.add_argument("frame_a", help="第一張影像（PPM P6 或 WTT1 [3,H,W]）")
    parser.add_argument("frame_b", help="第二張影像")
    parser.add_argument("--checkpoint", help="WTC1 檢查點；省略時使用隨機初始化的模型")
    parser.add_argument("--gt", help="真值流場 WTT1 [2,H,W]")
    parser.add_argument("--bins", default=DEFAULT_BINS, help="位移大小分組邊界（逗號分隔）")
    parser.add_argument("--plot", help="EPE 對位移大小圖輸出路徑（PNG）")
    add_model_flags(parser, iterations_key=None)
    parser.set_defaults(handler=run)
