"""雜項工具函數模組

包含錯誤捕獲、原子寫檔等輔助函數。
"""

from __future__ import annotations

import os
import pathlib
import tempfile

from loguru import logger


def should_ignore_error(error: BaseException) -> bool:
    """判斷是否應該忽略特定錯誤。

    使用者按下 Ctrl+C 不算是程式崩潰，不需要記錄堆疊。

    Args:
        error: 要檢查的異常

    Returns:
        如果應該忽略該錯誤則返回 True
    """
    return isinstance(error, KeyboardInterrupt)


def capture_exception(
    exception: BaseException,
    *,
    context: str | None = None,
    level: str = "error",
) -> None:
    """捕獲並記錄異常。

    Args:
        exception: 要捕獲的異常
        context: 附加在訊息前的說明
        level: loguru 日誌等級名稱
    """
    if should_ignore_error(exception):
        return

    normalized_level = level.upper()
    message_prefix = f"{context}: " if context else ""
    message = f"{message_prefix}{type(exception).__name__}: {exception}"

    try:
        logger.opt(exception=exception).log(normalized_level, message)
    except ValueError:
        logger.opt(exception=exception).error(message)


def atomic_write_bytes(path: str | os.PathLike[str], payload: bytes) -> pathlib.Path:
    """先寫入同目錄的暫存檔，再以 rename 取代目標檔。

    Args:
        path: 目標檔案路徑
        payload: 要寫入的內容

    Returns:
        目標檔案的 Path
    """
    target = pathlib.Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, target)
    except BaseException:
        pathlib.Path(tmp_name).unlink(missing_ok=True)
        raise
    logger.debug(f"[IO] wrote {len(payload)} bytes to {target}")
    return target


def atomic_write_text(path: str | os.PathLike[str], text: str) -> pathlib.Path:
    """以 UTF-8 原子寫入文字檔。"""
    return atomic_write_bytes(path, text.encode("utf-8"))
