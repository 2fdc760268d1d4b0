"""train 子命令：訓練模型，輸出 WTC1 檢查點與 JSON-lines 日誌"""

from __future__ import annotations

import argparse
import sys

from commands._shared import add_model_flags, build_config, echo_config, model_overrides
from utils.metrics import format_table
from utils.training import train


def run(args: argparse.Namespace) -> int:
    overrides = {
        "train.steps": args.steps,
        "train.batch_size": args.batch_size,
        "train.stop_after": args.stop_after,
        "train.eval_every": args.eval_every,
        "train.eval_clips": args.eval_clips,
        "train.dataset": args.dataset,
        "train.fast_reduce": True if args.fast_reduce else None,
        **model_overrides(args),
    }
    config = build_config(args, "train", overrides)
    if config.train.dataset is not None:
        config.paths["dataset"] = config.train.dataset
    if args.resume is not None:
        config.paths["resume"] = args.resume
    echo_config(config)
    outcome = train(config, config.out, resume=args.resume, threads=config.threads)
    sys.stdout.write(f"checkpoint {outcome.checkpoint_path} (step {outcome.step})\n")
    sys.stdout.write(f"log {outcome.log_path}\n")
    if outcome.report is not None:
        sys.stdout.write(format_table([("heldout", outcome.report)]))
    return 0


def setup(subparsers: argparse._SubParsersAction, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("train", parents=[common], help="訓練模型")
    parser.add_argument("--dataset", help="synth 產生的資料集目錄；省略時即時產生片段")
    parser.add_argument("--steps", type=int, help="總步數（決定學習率排程）")
    parser.add_argument("--batch-size", type=int, help="每步片段數")
    parser.add_argument("--stop-after", type=int, help="在第 N 步提前停止（不改變排程）")
    parser.add_argument("--resume", help="續訓用的 WTC1 檢查點")
    parser.add_argument("--eval-every", type=int, help="每幾步做一次保留評估（0 關閉）")
    parser.add_argument("--eval-clips", type=int, help="保留評估片段數")
    parser.add_argument("--fast-reduce", action="store_true", help="依完成順序歸約梯度（非決定性）")
    add_model_flags(parser)
    parser.set_defaults(handler=run)
