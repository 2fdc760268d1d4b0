from __future__ import annotations

# 複製成 private/config.py 後修改；檔案不存在時使用內建預設值

# 日誌
LOG_LEVEL = "INFO"
LOG_FILE = "logs/warptrack.log"

# 未指定 --threads 且沒有設定 WARPTRACK_THREADS 時的執行緒數（1 才能保證逐位元重現）
DEFAULT_THREADS = 1

# 未指定 --out 時，各子命令輸出到 <DEFAULT_OUT_DIR>/<子命令>
DEFAULT_OUT_DIR = "runs"
