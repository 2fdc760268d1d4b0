"""例外類別模組

warptrack 所有可預期的錯誤都繼承自 WarpTrackError，
命令列入口依照類別決定結束碼（使用錯誤回傳 2，其餘執行錯誤回傳 1）。
"""

from __future__ import annotations


class WarpTrackError(Exception):
    """Base class for all warptrack errors."""


class DimensionError(WarpTrackError):
    """張量形狀不相容。"""


class NumericError(WarpTrackError):
    """運算產生 NaN 或 Inf，或輸入本身不是有限值。"""


class UsageError(WarpTrackError):
    """呼叫端違反了函式的使用前提。"""


class ConfigError(UsageError):
    """設定檔或旗標不合法，或續訓時設定雜湊不一致。"""


class WireFormatError(WarpTrackError):
    """二進位檔案格式錯誤。

    Attributes:
        offset: 發現錯誤的位元組位置
    """

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class TrainingError(WarpTrackError):
    """訓練過程中出現非有限的 loss。

    Attributes:
        step: 發生錯誤的步數
        batch_seeds: 該批次每個樣本的種子
        dump_path: 診斷資料的輸出路徑（若有寫出）
    """

    def __init__(
        self, message: str, *, step: int, batch_seeds: list[int], dump_path: str | None
    ) -> None:
        super().__init__(message)
        self.step = step
        self.batch_seeds = batch_seeds
        self.dump_path = dump_path
