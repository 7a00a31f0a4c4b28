"""mask loss 的參考實作：softmax CE、smooth-L1、vertical 項、hard negative mining 與解析梯度。

所有加總都用 `math.fsum`，結果與影像或網格的處理順序無關。
"""
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .anchor_utils import AnchorDelta, GridSpec
from .array_utils import log_softmax, one_hot_encode_array, softmax
from .errors import ClassOutOfRange, NonFinite, ShapeMismatch
from .target_utils import AMBIGUOUS, N_CLASSES, N_REGRESSION, NEGATIVE, TEXT, LabelGrid

N_VERTICAL = 2


@dataclass(frozen=True, eq=False)
class PredictionGrid:
    """單一網格的網路輸出：logits (s, s, C)、regression (s, s, 5)、vertical_logits (s, s, 2)。"""
    grid: GridSpec
    logits: NDArray[np.float64]
    regression: NDArray[np.float64]
    vertical_logits: NDArray[np.float64]

    def __post_init__(self) -> None:
        s = self.grid.size
        shapes = {
            "logits": (s, s, None),
            "regression": (s, s, N_REGRESSION),
            "vertical_logits": (s, s, N_VERTICAL),
        }
        for name, shape in shapes.items():
            array = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if array.ndim != 3 or array.shape[:2] != shape[:2] or (shape[2] is not None and array.shape[2] != shape[2]):
                raise ShapeMismatch(f"PredictionGrid.{name} 應為 {shape}，收到 {array.shape}")
            if not np.all(np.isfinite(array)):
                raise NonFinite(f"PredictionGrid.{name} 含有 NaN 或 Inf")
            object.__setattr__(self, name, array)
        if self.logits.shape[2] < 2:
            raise ShapeMismatch("logits 至少需要 2 個類別")

    @property
    def size(self) -> int:
        return self.grid.size

    def cell(self, i: int, j: int) -> AnchorDelta:
        return AnchorDelta(
            *self.regression[i, j].tolist(),
            confidence=tuple(self.logits[i, j].tolist()),
            vertical_logits=tuple(self.vertical_logits[i, j].tolist()),
        )

    @classmethod
    def from_labels(cls, labels: LabelGrid, confidence: float = 20.0) -> "PredictionGrid":
        """把標籤當成完美預測：正確類別的 logit 為 confidence，其餘為 0。"""
        s = labels.size
        class_ids = labels.class_ids.astype(np.int64).ravel()
        logits = one_hot_encode_array(class_ids, N_CLASSES).reshape(s, s, N_CLASSES) * confidence
        vertical = one_hot_encode_array(labels.vertical.astype(np.int64).ravel(), N_VERTICAL)
        return cls(
            grid=labels.grid,
            logits=logits,
            regression=labels.regression.copy(),
            vertical_logits=vertical.reshape(s, s, N_VERTICAL) * confidence,
        )


@dataclass(frozen=True, slots=True)
class LossBreakdown:
    cls: float
    loc: float
    vertical: float
    total: float
    n_cls: int
    n_reg: int


@dataclass(frozen=True, eq=False)
class PredictionGradient:
    logits: NDArray[np.float64]
    regression: NDArray[np.float64]
    vertical_logits: NDArray[np.float64]


def smooth_l1(x: ArrayLike) -> float | NDArray[np.float64]:
    """0.5x² if |x| < 1 else |x| − 0.5，純量輸入回傳 float。"""
    arr = np.asarray(x, dtype=np.float64)
    out = np.where(np.abs(arr) < 1.0, 0.5 * arr * arr, np.abs(arr) - 0.5)
    return float(out) if out.ndim == 0 else out


def smooth_l1_grad(x: ArrayLike) -> float | NDArray[np.float64]:
    arr = np.asarray(x, dtype=np.float64)
    out = np.where(np.abs(arr) < 1.0, arr, np.sign(arr))
    return float(out) if out.ndim == 0 else out


def softmax_ce(logits: ArrayLike, true_class: int) -> float:
    """−log softmax(logits)[true_class]，先減去最大值以維持數值穩定。"""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ShapeMismatch(f"logits 必須為長度 ≥ 2 的一維陣列，收到 shape {arr.shape}")
    if not 0 <= true_class < arr.size:
        raise ClassOutOfRange(f"類別 {true_class} 超出範圍 [0, {arr.size})")
    return float(-log_softmax(arr)[true_class])


def _cell_ce(logits: NDArray[np.float64], targets: NDArray[np.integer]) -> NDArray[np.float64]:
    """沿最後一軸對每個 cell 計算 CE，targets 的 shape 為 logits.shape[:-1]。"""
    n_classes = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise ClassOutOfRange(f"標籤超出 [0, {n_classes})")
    picked = np.take_along_axis(log_softmax(logits), targets.astype(np.int64)[..., None], axis=-1)
    return -picked[..., 0]


def _fsum(arrays: Iterable[NDArray[np.float64]]) -> float:
    return math.fsum(v for array in arrays for v in np.ravel(array).tolist())


def _check_pairs(preds: Sequence[PredictionGrid], labels: Sequence[LabelGrid]) -> None:
    if len(preds) != len(labels):
        raise ShapeMismatch(f"預測網格數 {len(preds)} 與標籤網格數 {len(labels)} 不一致")
    for p, label in zip(preds, labels):
        if p.size != label.size:
            raise ShapeMismatch(f"網格大小不一致: {p.size} vs {label.size}")
        if int(label.class_ids.max(initial=0)) >= p.logits.shape[2]:
            raise ClassOutOfRange(f"標籤類別超出 logits 的 {p.logits.shape[2]} 個類別")


def hard_negative_select(
    cls_losses: Sequence[NDArray[np.float64]],
    labels: Sequence[LabelGrid],
    ratio: float = 3.0,
) -> list[NDArray[np.bool_]]:
    """挑出參與分類損失的 cell。

    class 1 與 class 2 全部保留；負樣本依分類損失由大到小排序（整個 pyramid 一起排，
    同分時依網格順序與 row-major 位置），保留前 floor(ratio·k) 個，k 為正樣本數；
    k = 0 時保留 max(1, floor(ratio)) 個。

    Returns
    ---
    list[NDArray[bool]]: 每個網格一個 (s, s) mask
    """
    if ratio <= 0:
        raise ValueError(f"ratio 必須為正: {ratio}")
    if len(cls_losses) != len(labels):
        raise ShapeMismatch("cls_losses 與 labels 數量不一致")

    masks = [(label.class_ids == TEXT) | (label.class_ids == AMBIGUOUS) for label in labels]
    n_pos = sum(label.n_positive for label in labels)
    n_keep = math.floor(ratio * n_pos) if n_pos > 0 else max(1, math.floor(ratio))

    flat_losses = np.concatenate([np.ravel(loss) for loss in cls_losses]) if labels else np.empty(0)
    flat_negative = np.concatenate([np.ravel(label.class_ids == NEGATIVE) for label in labels]) if labels else np.empty(0, bool)
    candidates = np.flatnonzero(flat_negative)
    order = np.argsort(-flat_losses[candidates], kind="stable")
    chosen = candidates[order[:n_keep]]

    offsets = np.cumsum([0] + [m.size for m in masks])
    for g, mask in enumerate(masks):
        local = chosen[(chosen >= offsets[g]) & (chosen < offsets[g + 1])] - offsets[g]
        mask.ravel()[local] = True
    return masks


def _selection(
    preds: Sequence[PredictionGrid],
    labels: Sequence[LabelGrid],
    ratio: float,
    selection: Optional[Sequence[NDArray[np.bool_]]],
) -> tuple[list[NDArray[np.float64]], list[NDArray[np.bool_]]]:
    cls_ce = [_cell_ce(p.logits, label.class_ids) for p, label in zip(preds, labels)]
    if selection is None:
        selection = hard_negative_select(cls_ce, labels, ratio)
    elif any(m.shape != label.class_ids.shape for m, label in zip(selection, labels)) or len(selection) != len(labels):
        raise ShapeMismatch("selection mask 的形狀與標籤不一致")
    return cls_ce, [np.asarray(m, dtype=bool) for m in selection]


def total_loss(
    preds: Sequence[PredictionGrid],
    labels: Sequence[LabelGrid],
    lambda_loc: float = 1.0,
    lambda_vertical: float = 1.0,
    ratio: float = 3.0,
    selection: Optional[Sequence[NDArray[np.bool_]]] = None,
) -> LossBreakdown:
    """cls/N_cls + λ1·loc/N_reg + λ2·vertical/N_reg。

    Args
    ---
    preds, labels: 一一對應的網格
    lambda_loc, lambda_vertical: λ1、λ2
    ratio: hard negative mining 的負正比
    selection: 預先算好的 mask；給定時不再重新挑負樣本

    Returns
    ---
    LossBreakdown
    """
    _check_pairs(preds, labels)
    cls_ce, selection = _selection(preds, labels, ratio, selection)

    cls_terms, loc_terms, vertical_terms = [], [], []
    n_cls = n_reg = 0
    for p, label, ce, selected in zip(preds, labels, cls_ce, selection):
        positive = label.class_ids == TEXT
        cls_terms.append(ce[selected])
        loc_terms.append(smooth_l1(p.regression[positive] - label.regression[positive]))
        vertical_terms.append(_cell_ce(p.vertical_logits[positive], label.vertical[positive]))
        n_cls += int(selected.sum())
        n_reg += int(positive.sum())

    cls = _fsum(cls_terms)
    loc = _fsum(loc_terms)
    vertical = _fsum(vertical_terms)
    total = math.fsum([
        cls / max(n_cls, 1),
        lambda_loc * loc / max(n_reg, 1),
        lambda_vertical * vertical / max(n_reg, 1),
    ])
    return LossBreakdown(cls=cls, loc=loc, vertical=vertical, total=total, n_cls=n_cls, n_reg=n_reg)


def loss_gradient(
    preds: Sequence[PredictionGrid],
    labels: Sequence[LabelGrid],
    lambda_loc: float = 1.0,
    lambda_vertical: float = 1.0,
    ratio: float = 3.0,
    selection: Optional[Sequence[NDArray[np.bool_]]] = None,
) -> list[PredictionGradient]:
    """`total_loss` 對所有預測欄位的解析梯度，HNM mask 視為常數。"""
    _check_pairs(preds, labels)
    _, selection = _selection(preds, labels, ratio, selection)
    n_cls = sum(int(m.sum()) for m in selection)
    n_reg = sum(label.n_positive for label in labels)
    cls_scale = 1.0 / max(n_cls, 1)
    loc_scale = lambda_loc / max(n_reg, 1)
    vertical_scale = lambda_vertical / max(n_reg, 1)

    gradients = []
    for p, label, selected in zip(preds, labels, selection):
        s, n_classes = p.size, p.logits.shape[2]
        onehot = one_hot_encode_array(label.class_ids.astype(np.int64).ravel(), n_classes).reshape(s, s, n_classes)
        g_logits = np.where(selected[..., None], (softmax(p.logits) - onehot) * cls_scale, 0.0)

        positive = label.class_ids == TEXT
        g_regression = np.zeros_like(p.regression)
        g_regression[positive] = smooth_l1_grad(p.regression[positive] - label.regression[positive]) * loc_scale

        g_vertical = np.zeros_like(p.vertical_logits)
        vertical_onehot = one_hot_encode_array(label.vertical[positive].astype(np.int64), N_VERTICAL)
        g_vertical[positive] = (softmax(p.vertical_logits[positive]) - vertical_onehot) * vertical_scale

        gradients.append(PredictionGradient(logits=g_logits, regression=g_regression, vertical_logits=g_vertical))
    return gradients
