"""warptrack 命令列主程式

不使用 cost volume 的稠密點追蹤器：合成資料產生、訓練、評估、追蹤、雙影格光流、疊圖與效能量測。
子命令模組放在 commands/ 底下（*_cmd.py），啟動時自動探索並呼叫各模組的 setup()。

結束碼：0 成功，2 使用方式或設定錯誤，1 執行期錯誤。
"""

from __future__ import annotations

import argparse
import importlib
import pathlib
import sys
from typing import TYPE_CHECKING

from loguru import logger

from commands._shared import common_parser
from utils.errors import UsageError
from utils.misc import capture_exception
from utils.startup import default_log_settings, setup_logging

if TYPE_CHECKING:
    from collections.abc import Sequence

COMMANDS_DIR = pathlib.Path(__file__).resolve().parent / "commands"
EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def discover_command_modules(commands_dir: pathlib.Path = COMMANDS_DIR) -> list[str]:
    """列出 commands/ 底下的 *_cmd.py 模組名稱（排序後）。"""
    if not commands_dir.exists():
        logger.warning("⚠️ commands 資料夾不存在，沒有可用的子命令。")
        return []
    return sorted(
        entry.stem
        for entry in commands_dir.iterdir()
        if entry.is_file() and entry.name.endswith("_cmd.py") and not entry.name.startswith("_")
    )


def build_parser() -> argparse.ArgumentParser:
    """建立主解析器並載入所有子命令。"""
    parser = argparse.ArgumentParser(
        prog="warptrack", description="Warping-based dense point tracker without cost volumes."
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    common = common_parser()
    for name in discover_command_modules():
        module = importlib.import_module(f"commands.{name}")
        module.setup(subparsers, common)
        logger.trace(f"[CLI] registered {name}")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """解析旗標並執行子命令，返回結束碼。"""
    parser = build_parser()
    args = parser.parse_args(argv)

    log_file, default_level = default_log_settings()
    log_level = (args.log_level or default_level).upper()
    try:
        logger.level(log_level)
    except ValueError:
        parser.error(f"未知的日誌等級 {log_level}")
    setup_logging(log_file=log_file, log_level=log_level)

    try:
        return args.handler(args) or EXIT_OK
    except UsageError as e:
        logger.error(f"❌ {e}")
        return EXIT_USAGE
    except KeyboardInterrupt:
        logger.info("程序被強制終止。")
        return EXIT_RUNTIME
    except Exception as e:
        capture_exception(e, context=f"❌ 子命令 {args.command} 執行失敗")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
