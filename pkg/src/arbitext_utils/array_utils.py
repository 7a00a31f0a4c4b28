import numba as nb
import numpy as np
from numpy.typing import NDArray


@nb.njit()
def one_hot_encode_array(array: NDArray[np.int64], n_classes: int) -> NDArray[np.float64]:
    """將一維類別 array 轉換成 one-hot encoding 的矩陣。

    Examples
    ---
    >>> one_hot_encode_array(np.array([1, 0, 2]), 3)
    array([
        [0, 1, 0],
        [1, 0, 0],
        [0, 0, 1],
    ])
    """
    out = np.zeros((array.shape[0], n_classes))
    for k in range(array.shape[0]):
        out[k, array[k]] = 1.0
    return out


def one_hot_decode_array(array: NDArray[np.float64]) -> NDArray[np.int_]:
    """沿最後一軸取 argmax，把 one-hot（或 logits）轉回類別。"""
    return np.argmax(array, axis=-1)


def softmax(logits: NDArray[np.float64]) -> NDArray[np.float64]:
    """沿最後一軸做數值穩定的 softmax（先減去最大值）。"""
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def log_softmax(logits: NDArray[np.float64]) -> NDArray[np.float64]:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
