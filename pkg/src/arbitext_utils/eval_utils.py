"""ICDAR 風格的 precision / recall / F 評估。"""
from collections.abc import Mapping, Sequence
from typing import Optional

from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel

from .errors import MissingImage, NonConvexQuad
from .geometry_utils import Quad, iou, min_area_rect, normalize_quad
from .io_utils import Annotation
from .nms_utils import Detection
from .sequence_utils import seq_difference


class ImageCounts(BaseModel):
    image_id: str
    tp: int
    fp: int
    fn: int


class EvalReport(BaseModel):
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    fscore: float
    per_image: list[ImageCounts]

    @classmethod
    def from_counts(cls, per_image: Sequence[ImageCounts]) -> "EvalReport":
        tp = sum(c.tp for c in per_image)
        fp = sum(c.fp for c in per_image)
        fn = sum(c.fn for c in per_image)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        fscore = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, fscore=fscore, per_image=list(per_image))


def _evaluable(q: Quad) -> Quad:
    try:
        return normalize_quad(q)
    except NonConvexQuad:
        logger.warning(f"凹四邊形以最小外接矩形代替: {q}")
        return min_area_rect(q.points).to_quad()


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[Annotation],
    iou_thresh: float = 0.5,
) -> tuple[int, int, int]:
    """單張影像的貪婪一對一匹配。

    偵測框依分數由高到低（同分依輸入順序）逐一處理：
    若與 ignore 區域的最大 IoU ≥ iou_thresh 且大於與任何一般 gt 的 IoU，直接略過不計；
    否則與尚未匹配、IoU ≥ iou_thresh 的一般 gt 中 IoU 最高者配對（同分取較早的 gt），配不到算 fp。

    Returns
    ---
    tuple[int, int, int]: (tp, fp, fn)
    """
    care = [_evaluable(g.quad) for g in gts if not g.ignore]
    ignored = [_evaluable(g.quad) for g in gts if g.ignore]
    matched = [False] * len(care)
    order = sorted(range(len(dets)), key=lambda k: -dets[k].score)

    tp = fp = 0
    for k in order:
        quad = _evaluable(dets[k].quad)
        care_ious = [iou(quad, g) for g in care]
        best_care = max(care_ious, default=0.0)
        best_ignore = max((iou(quad, g) for g in ignored), default=0.0)
        if best_ignore >= iou_thresh and best_ignore > best_care:
            continue

        best, best_iou = -1, iou_thresh
        for idx, value in enumerate(care_ious):
            if not matched[idx] and value >= best_iou and (best < 0 or value > best_iou):
                best, best_iou = idx, value
        if best >= 0:
            matched[best] = True
            tp += 1
        else:
            fp += 1
    return tp, fp, matched.count(False)


def _scaled(dets: Sequence[Detection], scale: float) -> list[Detection]:
    if scale == 1.0:
        return list(dets)
    return [Detection(d.quad.scale(scale), d.score, d.vertical, d.source) for d in dets]


def evaluate(
    detections: Mapping[str, Sequence[Detection]],
    ground_truths: Mapping[str, Sequence[Annotation]],
    iou_thresh: float = 0.5,
    scales: Optional[Mapping[str, float]] = None,
    n_jobs: int = 1,
) -> EvalReport:
    """跨影像的 micro-average 評估。

    Args
    ---
    detections: 影像 id → 偵測框
    ground_truths: 影像 id → 標註，id 集合必須與 detections 相同
    iou_thresh: 匹配門檻
    scales: 影像 id → 偵測座標乘上的比例（偵測在縮放後的影像上產生時使用）
    n_jobs: joblib 平行數

    Returns
    ---
    EvalReport: per_image 依影像 id 排序
    """
    only_gt = seq_difference(list(ground_truths), list(detections))
    only_det = seq_difference(list(detections), list(ground_truths))
    if only_gt or only_det:
        raise MissingImage(f"影像 id 不一致：只有 gt {only_gt}，只有偵測 {only_det}")

    image_ids = sorted(ground_truths)
    scales = scales or {}
    counts = Parallel(n_jobs=n_jobs)(
        delayed(match_detections)(_scaled(detections[i], scales.get(i, 1.0)), ground_truths[i], iou_thresh)
        for i in image_ids
    )
    per_image = [ImageCounts(image_id=i, tp=tp, fp=fp, fn=fn) for i, (tp, fp, fn) in zip(image_ids, counts)]
    report = EvalReport.from_counts(per_image)
    logger.info(f"評估 {len(image_ids)} 張影像: P={report.precision:.4f} R={report.recall:.4f} F={report.fscore:.4f}")
    return report


def format_report_text(report: EvalReport) -> str:
    lines = [f"{'image_id':<16}{'tp':>6}{'fp':>6}{'fn':>6}"]
    lines += [f"{c.image_id:<16}{c.tp:>6}{c.fp:>6}{c.fn:>6}" for c in report.per_image]
    lines.append(f"{'total':<16}{report.tp:>6}{report.fp:>6}{report.fn:>6}")
    lines.append(f"precision={report.precision:.4f} recall={report.recall:.4f} fscore={report.fscore:.4f}")
    return "\n".join(lines) + "\n"


def report_to_json(report: EvalReport) -> str:
    return report.model_dump_json(indent=2) + "\n"
