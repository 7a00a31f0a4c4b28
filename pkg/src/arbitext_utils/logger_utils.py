import logging
import sys
from pathlib import Path
from typing import Optional

from loguru import logger


def start_log(
    level: str = "INFO",
    log_dir: Optional[str | Path] = None,
    return_handlers: bool = False,
) -> Optional[tuple[int, ...]]:
    """重設 loguru 的輸出處理器。

    stdout 保留給 CLI 報表，所以日誌一律寫到 stderr（以及可選的檔案）。

    Args
    ---
    level (str, optional): 處理器的日誌等級，預設為 "INFO"
    log_dir (Optional[str | Path]): 若提供，額外寫入 `<log_dir>/arbitext.log` 並每週輪替
    return_handlers (bool, optional): 是否回傳新增的處理器 ID

    Returns
    ---
    tuple[int, ...]: 新增的處理器 ID
    """
    logger.remove()  # 移除所有現有處理器

    handler_ids = [logger.add(sys.stderr, level=level)]

    if log_dir is not None:
        log_path = Path(log_dir)
        log_path.mkdir(parents=True, exist_ok=True)
        handler_ids.append(
            logger.add(
                log_path / "arbitext.log",
                format="{time} {level} {message}",
                level=level,
                rotation="1 week",
            )
        )

    logger.debug(f"開始用以下 ID 紀錄 {level} 層級以上訊息: {tuple(handler_ids)}")

    if return_handlers:
        return tuple(handler_ids)
    return None


class _ToLoguru(logging.Handler):
    """把標準 logging 的紀錄轉交給 loguru，並保留原本的呼叫位置。"""

    def emit(self, record: logging.LogRecord) -> None:  # noqa: PLR6301
        level: str | int = record.levelname if record.levelname in _LOGURU_LEVELS else record.levelno
        # 跳過 logging 模組自己的 frame，讓 loguru 顯示真正發出訊息的位置
        depth, frame = 0, sys._getframe(1)
        while frame is not None and frame.f_code.co_filename == logging.__file__:
            frame = frame.f_back
            depth += 1
        logger.opt(depth=depth + 1, exception=record.exc_info).log(level, record.getMessage())


_LOGURU_LEVELS = frozenset({"TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"})


def redirect_libraries_logging_to_loguru(log_level_map: dict[str, str]) -> None:
    """讓第三方函式庫（例如 numba）的 stdlib logger 改由 loguru 輸出。

    Args
    ---
    log_level_map (dict[str, str]): logger 名稱 → 最低轉交等級，例如 {"numba": "WARNING"}
    """
    handler = _ToLoguru()
    for name, level in log_level_map.items():
        lib_logger = logging.getLogger(name)
        lib_logger.handlers = [handler]
        lib_logger.setLevel(level.upper())
        lib_logger.propagate = False
        logger.debug(f"{name} 的 logging 已轉交 loguru（等級 {level.upper()}）")
