"""eval 子命令：在保留片段上計算 AJ、δ_avg、OA

預測器可以是訓練好的模型、真值（檢查評估管線）或靜止基準（u ≡ 0，AJ 的下限）。
--sweep 依序以多個 K 評估同一檢查點，可選擇輸出折線圖。
"""

from __future__ import annotations

import argparse
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
from utils.errors import UsageError
from utils.image_io import plot_iteration_sweep
from utils.metrics import aggregate_reports, format_table
from utils.training import PREDICTORS, ClipSource, evaluate_clips, load_model


def run(args: argparse.Namespace) -> int:
    overrides = {"train.eval_clips": args.clips, "train.dataset": args.dataset, **model_overrides(args)}
    config = build_config(args, "eval", overrides)
    if args.predictor == "model" and args.checkpoint is None:
        msg = "--predictor model 需要 --checkpoint"
        raise UsageError(msg)
    sweep = parse_int_list(args.sweep) or [args.iters]
    model_cfg = model_config_for(config, args.checkpoint if args.predictor == "model" else None, args)
    if args.checkpoint is not None:
        config.paths["checkpoint"] = args.checkpoint
    echo_config(config)

    clips = ClipSource(config.scene, config.train.dataset).heldout(config.train.eval_clips)
    store = load_model(args.checkpoint, model_cfg) if args.predictor == "model" else None
    logger.info("✅ 評估 {count} 個片段（預測器 {predictor}）", count=len(clips), predictor=args.predictor)

    runs = []
    for k in sweep if args.predictor == "model" else [None]:
        reports = evaluate_clips(
            clips, predictor=args.predictor, store=store, cfg=model_cfg, iterations=k, threads=config.threads
        )
        runs.append((k, reports, aggregate_reports(reports)))
    baseline = aggregate_reports(evaluate_clips(clips, predictor="stationary", threads=config.threads))

    rows = [
        (f"{args.predictor} K={agg.iterations}" if agg.iterations is not None else args.predictor, agg)
        for _, _, agg in runs
    ]
    rows.append(("stationary", baseline))
    sys.stdout.write(format_table(rows))

    payload = {
        "predictor": args.predictor,
        "checkpoint": args.checkpoint,
        "config_hash": config.config_hash(),
        "runs": [
            {
                "iterations": agg.iterations,
                "aggregate": agg.to_dict(),
                "clips": [r.to_dict() for r in reports],
            }
            for _, reports, agg in runs
        ],
        "baseline": baseline.to_dict(),
    }
    out = pathlib.Path(config.out)
    write_json(out / "eval_report.json", payload)
    if args.plot is not None and args.predictor == "model":
        plot_iteration_sweep(args.plot, [(agg.iterations, agg) for _, _, agg in runs])
    return 0


def setup(subparsers: argparse._SubParsersAction, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("eval", parents=[common], help="評估追蹤品質")
    parser.add_argument("--checkpoint", help="WTC1 檢查點")
    parser.add_argument("--dataset", help="資料集目錄（使用 heldout 分割）；省略時即時產生")
    parser.add_argument("--clips", type=int, help="評估片段數")
    parser.add_argument("--predictor", choices=PREDICTORS, default="model", help="預測來源")
    parser.add_argument("--sweep", help="以逗號分隔的 K 列表，例如 1,2,4,6")
    parser.add_argument("--plot", help="迭代掃描折線圖輸出路徑（PNG）")
    add_model_flags(parser, iterations_key=None)
    parser.set_defaults(handler=run)
