from collections.abc import Callable
from functools import wraps

from loguru import logger

from .errors import ArbitextError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def exit_code_on_error(enabled: bool = True):
    """ 裝飾器：把子命令中的例外轉成 exit code，避免 traceback 直接噴到使用者面前。

    ArbitextError → 1，OSError → 2；其他例外照常拋出。
    """
    def decorator(func: Callable[..., int]) -> Callable[..., int]:
        if not enabled:
            return func  # 直接回傳原函數，方便測試時看到完整 traceback

        @wraps(func)
        def wrapper(*args, **kwargs) -> int:
            try:
                return func(*args, **kwargs)
            except ArbitextError as e:
                logger.error(f"{func.__name__} 驗證失敗: {e}")
                return EXIT_VALIDATION
            except OSError as e:
                logger.error(f"{func.__name__} 讀寫失敗: {e}")
                return EXIT_IO
        return wrapper

    return decorator
