"""信心過濾、標準 NMS 與 Locality-Aware NMS。"""
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal, Optional

import numba as nb
import numpy as np
from loguru import logger
from numpy.typing import NDArray

from .anchor_utils import apply_delta, decode_circle_anchor
from .array_utils import softmax
from .errors import ArbitextError, NonFinite, NonPositive
from .geometry_utils import Quad, quad_iou_kernel
from .loss_utils import PredictionGrid
from .target_utils import TEXT

NmsMode = Literal["naive", "lanms"]


@dataclass(frozen=True)
class Detection:
    """一個偵測框。source 為 (網格大小, i, j)，記錄它來自哪個 cell。"""
    quad: Quad
    score: float
    vertical: Optional[int] = None
    source: Optional[tuple[int, int, int]] = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise NonFinite(f"Detection 分數必須為有限值: {self.score}")
        if self.score <= 0:
            raise NonPositive(f"Detection 分數必須為正: {self.score}")


@dataclass(frozen=True, slots=True)
class NmsStats:
    n_input: int
    n_candidates: int
    merge_iou_tests: int
    final_iou_tests: int

    @property
    def iou_tests(self) -> int:
        return self.merge_iou_tests + self.final_iou_tests


@nb.njit()
def _lanms_pass(quads, scores, merge_iou):
    n = quads.shape[0]
    out_quads = np.empty((n, 4, 2))
    out_scores = np.empty(n)
    out_rep = np.empty(n, dtype=np.int64)
    out_merged = np.zeros(n, dtype=np.bool_)

    current = quads[0].copy()
    current_score = scores[0]
    current_rep = 0
    merged = False
    n_out = 0
    n_tests = 0
    for k in range(1, n):
        n_tests += 1
        if quad_iou_kernel(current, quads[k]) > merge_iou:
            total = current_score + scores[k]
            for r in range(4):
                for c in range(2):
                    current[r, c] = (current_score * current[r, c] + scores[k] * quads[k, r, c]) / total
            if scores[k] > current_score:
                current_rep = k
            current_score = total
            merged = True
        else:
            out_quads[n_out] = current
            out_scores[n_out] = current_score
            out_rep[n_out] = current_rep
            out_merged[n_out] = merged
            n_out += 1
            current = quads[k].copy()
            current_score = scores[k]
            current_rep = k
            merged = False

    out_quads[n_out] = current
    out_scores[n_out] = current_score
    out_rep[n_out] = current_rep
    out_merged[n_out] = merged
    n_out += 1
    return out_quads[:n_out], out_scores[:n_out], out_rep[:n_out], out_merged[:n_out], n_tests


@nb.njit()
def _greedy_nms(quads, order, iou_thresh):
    n = order.shape[0]
    suppressed = np.zeros(n, dtype=np.bool_)
    keep = np.empty(n, dtype=np.int64)
    n_keep = 0
    n_tests = 0
    for a in range(n):
        if suppressed[a]:
            continue
        best = order[a]
        keep[n_keep] = best
        n_keep += 1
        for b in range(a + 1, n):
            if suppressed[b]:
                continue
            n_tests += 1
            if quad_iou_kernel(quads[best], quads[order[b]]) > iou_thresh:
                suppressed[b] = True
    return keep[:n_keep], n_tests


def _to_arrays(dets: Sequence[Detection]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    quads = np.ascontiguousarray(np.stack([d.quad.points for d in dets]))
    scores = np.fromiter((d.score for d in dets), dtype=np.float64, count=len(dets))
    return quads, scores


def filter_by_confidence(
    grids: Sequence[PredictionGrid],
    threshold: float = 0.5,
    image_size_px: float = 1.0,
) -> list[Detection]:
    """挑出 text 機率 > threshold 的 cell 並解碼成 Detection。

    網格由大到小、每個網格內 row-major，這個順序就是 LANMS 依賴的 locality。
    image_size_px 把正規化座標放大回像素；解碼失敗（面積超過 2r² 等）的 cell 會被略過。
    """
    detections = []
    for grid in sorted(grids, key=lambda g: -g.size):
        probs = softmax(grid.logits)[..., TEXT]
        for i, j in np.argwhere(probs > threshold):
            i, j = int(i), int(j)
            delta = grid.cell(i, j)
            try:
                quad = decode_circle_anchor(apply_delta(delta, i, j, grid.grid))
            except ArbitextError as e:
                logger.debug(f"略過 cell {(grid.size, i, j)}: {e}")
                continue
            detections.append(Detection(
                quad=quad.scale(image_size_px),
                score=float(probs[i, j]),
                vertical=delta.vertical,
                source=(grid.size, i, j),
            ))
    return detections


def weighted_merge(a: Detection, b: Detection) -> Detection:
    """以分數加權平均角點，分數相加；vertical 與 source 取分數較高者（同分取 a）。"""
    total = a.score + b.score
    points = (a.score * a.quad.points + b.score * b.quad.points) / total
    keeper = b if b.score > a.score else a
    return Detection(Quad(points), total, keeper.vertical, keeper.source)


def lanms_merge_pass(dets: Sequence[Detection], merge_iou: float = 0.5) -> tuple[list[Detection], int]:
    """LANMS 的合併階段：依輸入順序維護目前的合併框 g。

    Returns
    ---
    tuple[list[Detection], int]: 合併後的候選框，以及做過的 IoU 測試次數（恰為 n-1）
    """
    if not dets:
        return [], 0
    quads, scores = _to_arrays(dets)
    out_quads, out_scores, out_rep, out_merged, n_tests = _lanms_pass(quads, scores, merge_iou)

    candidates = []
    for quad, score, rep, merged in zip(out_quads, out_scores, out_rep, out_merged):
        source = dets[int(rep)]
        if merged:
            candidates.append(Detection(Quad(quad), float(score), source.vertical, source.source))
        else:
            candidates.append(source)
    return candidates, int(n_tests)


def _standard_nms(dets: Sequence[Detection], iou_thresh: float) -> tuple[list[Detection], int]:
    if not dets:
        return [], 0
    quads, scores = _to_arrays(dets)
    order = np.argsort(-scores, kind="stable")
    keep, n_tests = _greedy_nms(quads, order, iou_thresh)
    return [dets[int(k)] for k in keep], int(n_tests)


def suppress(
    dets: Sequence[Detection],
    mode: NmsMode = "lanms",
    merge_iou: float = 0.5,
    final_iou: float = 0.5,
) -> tuple[list[Detection], NmsStats]:
    """執行 NMS 並回傳 IoU 測試次數等統計。

    Args
    ---
    dets: 依 filter_by_confidence 的 raster 順序排列的偵測框
    mode: "naive" 為標準 NMS，"lanms" 先合併再做標準 NMS
    merge_iou: LANMS 合併門檻
    final_iou: 標準 NMS 抑制門檻

    Returns
    ---
    tuple[list[Detection], NmsStats]
    """
    if mode == "naive":
        kept, final_tests = _standard_nms(dets, final_iou)
        return kept, NmsStats(len(dets), len(dets), 0, final_tests)
    if mode != "lanms":
        raise ValueError(f"未知的 NMS 模式: {mode}")

    candidates, merge_tests = lanms_merge_pass(dets, merge_iou)
    kept, final_tests = _standard_nms(candidates, final_iou)
    logger.debug(f"LANMS: {len(dets)} → {len(candidates)} 候選 → {len(kept)} 保留，IoU 測試 {merge_tests} + {final_tests}")
    return kept, NmsStats(len(dets), len(candidates), merge_tests, final_tests)


def standard_nms(dets: Sequence[Detection], iou_thresh: float = 0.5) -> list[Detection]:
    """貪婪 NMS：依分數由高到低保留，抑制 IoU > iou_thresh 者；同分取較早的索引。"""
    return suppress(dets, "naive", final_iou=iou_thresh)[0]


def lanms(dets: Sequence[Detection], merge_iou: float = 0.5, final_iou: float = 0.5) -> list[Detection]:
    """Locality-aware NMS：相鄰框先以分數加權合併，再做標準 NMS。

    Args
    ---
    dets: 依 raster 順序排列的偵測框
    merge_iou: 合併門檻
    final_iou: 標準 NMS 抑制門檻

    Returns
    ---
    list[Detection]: 保留的偵測框，分數由高到低
    """
    return suppress(dets, "lanms", merge_iou, final_iou)[0]
