"""日誌攔截器模組

此模組提供 InterceptHandler，用於將 Python 標準 logging 模組的日誌
（例如 matplotlib 的字型警告）重定向到 loguru，實現統一的日誌管理。
"""

from __future__ import annotations

import inspect
import logging

from loguru import logger

# matplotlib 在 DEBUG 等級會輸出大量字型搜尋訊息
NOISY_LOGGERS = ("matplotlib", "matplotlib.font_manager", "PIL")


class InterceptHandler(logging.Handler):
    """攔截標準 logging 模組的日誌並重定向到 loguru。"""

    def emit(self, record: logging.LogRecord) -> None:
        """處理日誌記錄。

        Args:
            record: 標準 logging 的日誌記錄
        """
        level: str | int
        try:
            level = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno

        # 找到調用者的堆疊幀
        frame, depth = inspect.currentframe(), 0
        while frame and (depth == 0 or frame.f_code.co_filename == logging.__file__):
            frame = frame.f_back
            depth += 1

        logger.opt(depth=depth, exception=record.exc_info).log(
            level, "[{origin}] {message}", origin=record.name, message=record.getMessage()
        )


def install_intercept(level: int = logging.INFO) -> None:
    """把根 logger 的處理器換成 InterceptHandler，並調低第三方套件的噪音。"""
    logging.basicConfig(handlers=[InterceptHandler()], level=level, force=True)
    logging.captureWarnings(True)
    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(max(level, logging.WARNING))
