"""串接各模組的流程：標籤解碼、closed-loop 自我檢查與 NMS benchmark。"""
import time
from collections.abc import Sequence

import pandas as pd
from loguru import logger

from .config_utils import ArbitextConfig, get_rng
from .eval_utils import EvalReport, evaluate
from .geometry_utils import quad_from_rbox
from .io_utils import ICDAR_IGNORE, Annotation
from .loss_utils import PredictionGrid
from .nms_utils import Detection, NmsMode, filter_by_confidence, suppress
from .synthetic_utils import clustered_detections, synthetic_scene
from .target_utils import LabelGrid, PyramidSpec, build_targets

PERFECT_CONFIDENCE = 20.0


def pyramid_from_config(config: ArbitextConfig) -> PyramidSpec:
    return PyramidSpec.from_sizes(config.grid_sizes, r_a=config.r_a, alpha=config.alpha)


def decode_predictions(
    grids: Sequence[PredictionGrid],
    config: ArbitextConfig,
    mode: NmsMode | None = "lanms",
) -> list[Detection]:
    """預測網格 → 信心過濾 → NMS（mode 為 None 時不做 NMS）。"""
    detections = filter_by_confidence(grids, config.confidence, config.image_size)
    if mode is None:
        return detections
    kept, _ = suppress(detections, mode, config.merge_iou, config.final_iou)
    return kept


def decode_labels(labels: Sequence[LabelGrid], config: ArbitextConfig, mode: NmsMode | None = "lanms") -> list[Detection]:
    """把標籤當成完美預測來解碼。"""
    grids = [PredictionGrid.from_labels(g, PERFECT_CONFIDENCE) for g in labels]
    return decode_predictions(grids, config, mode)


def run_selfcheck(n_scenes: int, seed: int, config: ArbitextConfig) -> EvalReport:
    """closed-loop 檢查：合成場景 → build_targets → 完美預測 → LANMS → 評估，預期 F = 1。"""
    pyramid = pyramid_from_config(config)
    detections: dict[str, list[Detection]] = {}
    ground_truths: dict[str, list[Annotation]] = {}

    for k in range(n_scenes):
        image_id = f"scene_{k:04d}"
        boxes, flags = synthetic_scene(get_rng(seed, k), pyramid, config.image_size)
        labels = build_targets(boxes, pyramid, config.image_size, flags)
        detections[image_id] = decode_labels(labels, config)
        ground_truths[image_id] = [
            Annotation(quad_from_rbox(b), ICDAR_IGNORE if ignore else "text", ignore)
            for b, ignore in zip(boxes, flags)
        ]

    report = evaluate(detections, ground_truths, config.eval_iou, n_jobs=config.n_jobs)
    if report.fp or report.fn:
        failed = [c.image_id for c in report.per_image if c.fp or c.fn]
        logger.warning(f"closed-loop 檢查失敗的場景: {failed}")
    return report


def _timed_suppress(dets: list[Detection], mode: NmsMode, config: ArbitextConfig, repeats: int) -> dict:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        kept, stats = suppress(dets, mode, config.merge_iou, config.final_iou)
        best = min(best, time.perf_counter() - start)
    return {
        "mode": mode,
        "n_input": stats.n_input,
        "n_candidates": stats.n_candidates,
        "n_output": len(kept),
        "iou_tests": stats.iou_tests,
        "seconds": best,
    }


def bench_nms(n: int, n_clusters: int, seed: int, config: ArbitextConfig, repeats: int = 3) -> pd.DataFrame:
    """在同一批群聚偵測框上比較標準 NMS 與 LANMS 的 IoU 測試次數與耗時（取最佳一次）。"""
    dets = clustered_detections(n, n_clusters, seed)
    # 先在小輸入上觸發 numba 編譯，避免計入第一次的 JIT 時間
    for mode in ("naive", "lanms"):
        suppress(dets[:2], mode)

    rows = [_timed_suppress(dets, mode, config, repeats) for mode in ("naive", "lanms")]
    df = pd.DataFrame(rows)
    df["speedup"] = df["seconds"].iloc[0] / df["seconds"]
    logger.info(f"NMS benchmark: n={n}, clusters={n_clusters}, LANMS 加速 {df['speedup'].iloc[1]:.1f} 倍")
    return df
