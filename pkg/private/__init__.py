# Machine-local settings for warptrack; copy config.sample.py to config.py (not committed)
