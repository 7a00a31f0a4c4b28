"""合成資料：closed-loop 檢查用的場景，以及 NMS benchmark 用的群聚偵測框。"""
import math

import numpy as np

from .config_utils import get_rng
from .geometry_utils import RotatedBox, polygon_intersection_area, quad_from_rbox
from .nms_utils import Detection
from .target_utils import PyramidSpec

MAX_HEIGHT_RATIO = 3.9
MIN_HEIGHT_RATIO = 1.01
# 短邊至少要讓最近的 cell 中心分數 ≥ α（cell 中心與框中心的距離至多 c/√2）
_CELL_OFFSET = 1.415
_OVERLAP_TOLERANCE = 1e-9


def height_ratio_range(alpha: float) -> tuple[float, float]:
    """合成框短邊 h 相對 cell 大小的範圍，保證每個框至少有一個正樣本 cell。"""
    if alpha >= 1.0:
        raise ValueError("alpha = 1 時無法保證正樣本存在")
    low = max(MIN_HEIGHT_RATIO, _CELL_OFFSET / math.sqrt(1 - alpha ** 2))
    if low >= MAX_HEIGHT_RATIO:
        raise ValueError(f"alpha={alpha} 太大，合成框無法同時滿足尺度匹配與正樣本條件")
    return low, MAX_HEIGHT_RATIO


def synthetic_scene(
    rng: np.random.Generator,
    pyramid: PyramidSpec,
    image_size_px: float,
    max_boxes: int = 8,
    ignore_prob: float = 0.1,
    max_tries: int = 50,
) -> tuple[list[RotatedBox], list[bool]]:
    """隨機產生 1 到 max_boxes 個互不重疊的旋轉框，每個框對應到隨機的一層網格。

    Returns
    ---
    tuple[list[RotatedBox], list[bool]]: 像素座標的框與 ignore 旗標
    """
    low, high = height_ratio_range(pyramid.alpha)
    n_boxes = int(rng.integers(1, max_boxes + 1))
    boxes: list[RotatedBox] = []
    flags: list[bool] = []
    quads = []
    for _ in range(n_boxes):
        for _ in range(max_tries):
            grid = pyramid.grids[int(rng.integers(len(pyramid.grids)))]
            h = rng.uniform(low, high) * image_size_px / grid.size
            w = h * rng.uniform(1.0, 4.0)
            cx, cy = rng.uniform(0.0, image_size_px, size=2)
            box = RotatedBox(float(cx), float(cy), float(w), float(h), float(rng.uniform(-math.pi / 2, math.pi / 2)))
            quad = quad_from_rbox(box)
            if all(polygon_intersection_area(quad, q) <= _OVERLAP_TOLERANCE for q in quads):
                boxes.append(box)
                flags.append(bool(rng.random() < ignore_prob))
                quads.append(quad)
                break
    return boxes, flags


def clustered_detections(
    n: int = 20_000,
    n_clusters: int = 50,
    seed: int = 0,
    box_size: tuple[float, float] = (120.0, 30.0),
) -> list[Detection]:
    """產生 n 個偵測框，分成 n_clusters 群互不重疊的文字行。

    同一群的框只有微小抖動，輸出時同一群連續排列，模擬 filter_by_confidence 的 raster 順序。
    """
    rng = get_rng(seed, n_clusters)
    cols = math.ceil(math.sqrt(n_clusters))
    pitch_x, pitch_y = box_size[0] * 2.5, box_size[1] * 4.0
    sizes = np.full(n_clusters, n // n_clusters)
    sizes[: n % n_clusters] += 1

    detections = []
    for k, count in enumerate(sizes):
        cx = (k % cols + 0.5) * pitch_x
        cy = (k // cols + 0.5) * pitch_y
        theta = rng.uniform(-0.2, 0.2)
        jitter = rng.normal(0.0, 1.5, size=(count, 2))
        scale = 1.0 + rng.uniform(-0.02, 0.02, size=(count, 2))
        angle = theta + rng.normal(0.0, 0.01, size=count)
        scores = rng.uniform(0.5, 1.0, size=count)
        for m in range(count):
            box = RotatedBox(
                cx + jitter[m, 0], cy + jitter[m, 1],
                box_size[0] * scale[m, 0], box_size[1] * scale[m, 1], float(angle[m]),
            )
            detections.append(Detection(quad_from_rbox(box), float(scores[m]), source=(n_clusters, k, m)))
    return detections
