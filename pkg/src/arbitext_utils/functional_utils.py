from collections.abc import Callable, Sequence
from functools import partial, reduce
from typing import TypeVar

T = TypeVar("T")


def chain_steps(steps: Sequence[Callable[[T], T]]) -> Callable[[T], T]:
    """依 steps 的順序串成單一函數：chain_steps([f, g])(x) == g(f(x))。

    空序列回傳 identity。

    Examples
    ---
    >>> chain_steps([lambda x: x + 1, lambda x: x * 2])(3)
    8
    """
    return reduce(lambda acc, step: (lambda x: step(acc(x))), steps, lambda x: x)


def describe_step(step: partial | Callable) -> str:
    """把一個增強步驟轉成可讀字串，例如 `crop_sample(scale=0.5, fx=0.1)`。

    Args
    ---
    step (partial|Callable): functools.partial 或一般函數

    Returns
    ---
    str: 函數名稱與綁定的參數
    """
    if isinstance(step, partial):
        bound = [repr(a) for a in step.args] + [f"{k}={v!r}" for k, v in (step.keywords or {}).items()]
        return f"{step.func.__name__}({', '.join(bound)})"
    return f"{getattr(step, '__name__', type(step).__name__)}()"
