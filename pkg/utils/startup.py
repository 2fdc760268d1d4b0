"""啟動工具模組

包含日誌系統初始化、執行緒數量解析以及執行緒池包裝器等啟動相關的工具函數。
"""

from __future__ import annotations

import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import TYPE_CHECKING, Any, TypeVar

from loguru import logger

from utils.errors import ConfigError
from utils.log_intercept import install_intercept
from utils.misc import should_ignore_error

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV_VAR = "WARPTRACK_THREADS"


def _private_setting(name: str, default: Any) -> Any:
    """讀取 private/config.py 中的設定，檔案不存在時返回預設值。"""
    try:
        from private import config  # noqa: PLC0415
    except ImportError:
        return default
    return getattr(config, name, default)


def default_log_settings() -> tuple[str, str]:
    """返回 (log_file, log_level)，可由 private/config.py 覆寫。"""
    return (
        _private_setting("LOG_FILE", "logs/warptrack.log"),
        _private_setting("LOG_LEVEL", "INFO"),
    )


def default_out_dir() -> str:
    return _private_setting("DEFAULT_OUT_DIR", "runs")


def setup_logging(log_file: str = "logs/warptrack.log", log_level: str = "INFO") -> None:
    """設定 loguru 日誌系統。

    此函數會：
    1. 移除 loguru 的預設處理器
    2. 添加控制台輸出（彩色）
    3. 添加文件輸出（自動輪轉）
    4. 攔截所有標準 logging 模組的日誌（包括 matplotlib）

    Args:
        log_file: 日誌文件路徑，預設為 "logs/warptrack.log"
        log_level: 日誌等級，預設為 "INFO"
    """
    logger.remove()

    logger.add(
        sys.stderr,
        level=log_level,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
    )

    install_intercept(logging.DEBUG if log_level.upper() == "DEBUG" else logging.INFO)

    logger.add(
        log_file,
        rotation="10 MB",
        retention="7 days",
        level=log_level,
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
        encoding="utf-8",
    )

    logger.info("✅ 日誌系統初始化完成。日誌等級: {log_level}", log_level=log_level)


def resolve_thread_count(flag: int | None = None) -> int:
    """決定工作執行緒數量。

    優先順序：命令列旗標 → 環境變數 WARPTRACK_THREADS → private.config.DEFAULT_THREADS → 1。

    Args:
        flag: --threads 的值，未指定時為 None

    Returns:
        至少為 1 的執行緒數量

    Raises:
        ConfigError: 數值無法解析或小於 1
    """
    source = "--threads"
    raw: Any = flag
    if raw is None:
        raw = os.environ.get(THREADS_ENV_VAR)
        source = THREADS_ENV_VAR
    if raw is None:
        raw = _private_setting("DEFAULT_THREADS", 1)
        source = "private.config"

    try:
        threads = int(raw)
    except (TypeError, ValueError) as e:
        msg = f"{source} 必須是整數，收到 {raw!r}"
        raise ConfigError(msg) from e
    if threads < 1:
        msg = f"{source} 必須 >= 1，收到 {threads}"
        raise ConfigError(msg)

    logger.debug(f"[STARTUP] thread count {threads} (from {source})")
    return threads


def parallel_map(
    fn: Callable[[T], R],
    items: Iterable[T],
    threads: int = 1,
    *,
    on_complete: Callable[[int, R], None] | None = None,
) -> list[R]:
    """在執行緒池中套用 fn，結果依輸入順序返回。

    threads 為 1 時直接在目前執行緒依序執行，不建立執行緒池。
    on_complete 會以完成順序被呼叫（index, result），供需要依完成順序歸約的呼叫端使用。

    Args:
        fn: 要套用的函數
        items: 輸入序列
        threads: 執行緒數量
        on_complete: 每個項目完成時的回呼

    Returns:
        與輸入順序一致的結果列表
    """
    work = list(items)

    def wrapper(index: int, item: T) -> R:
        try:
            return fn(item)
        except Exception as e:
            if not should_ignore_error(e):
                name = getattr(fn, "__name__", str(fn))
                logger.exception(f"工作 '{name}'（第 {index} 項）中發生未捕獲的異常: {e}")
            raise

    if threads <= 1 or len(work) <= 1:
        results: list[R] = []
        for i, item in enumerate(work):
            result = wrapper(i, item)
            if on_complete is not None:
                on_complete(i, result)
            results.append(result)
        return results

    ordered: list[Any] = [None] * len(work)
    with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="warptrack") as pool:
        futures = {pool.submit(wrapper, i, item): i for i, item in enumerate(work)}
        for future in as_completed(futures):
            i = futures[future]
            result = future.result()
            if on_complete is not None:
                on_complete(i, result)
            ordered[i] = result
    return ordered
