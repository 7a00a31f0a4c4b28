"""訓練標籤：半橢圓分數、三分類切分、尺度匹配與多尺度 LabelGrid 組裝。"""
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .anchor_utils import GridSpec, compute_delta, encode_circle_anchor, vertical_flag
from .errors import DegenerateBox, ShapeMismatch
from .geometry_utils import Point2, RotatedBox

NEGATIVE = 0
TEXT = 1
AMBIGUOUS = 2
N_CLASSES = 3
N_REGRESSION = 5
AMBIGUOUS_SCORE = 0.5
DEFAULT_GRID_SIZES = (48, 24, 12, 6, 3, 1)


class PyramidSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    grids: tuple[GridSpec, ...] = Field(default_factory=lambda: tuple(GridSpec(size=s) for s in DEFAULT_GRID_SIZES))
    alpha: float = Field(default=0.7, gt=AMBIGUOUS_SCORE, le=1.0)

    @field_validator("grids")
    @classmethod
    def _strictly_decreasing(cls, grids: tuple[GridSpec, ...]) -> tuple[GridSpec, ...]:
        if not grids:
            raise ValueError("pyramid 至少需要一個網格")
        sizes = [g.size for g in grids]
        if any(a <= b for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"網格大小必須嚴格遞減: {sizes}")
        return grids

    @classmethod
    def from_sizes(cls, sizes: Sequence[int], r_a: float = 1.5, alpha: float = 0.7) -> "PyramidSpec":
        return cls(grids=tuple(GridSpec(size=s, r_a=r_a) for s in sizes), alpha=alpha)

    @property
    def sizes(self) -> list[int]:
        return [g.size for g in self.grids]


@dataclass(frozen=True, slots=True)
class CellLabel:
    class_id: int
    score: float
    regression: Optional[tuple[float, ...]] = None
    vertical: Optional[int] = None

    def __post_init__(self) -> None:
        has_target = self.regression is not None and self.vertical is not None
        if has_target != (self.class_id == TEXT):
            raise ShapeMismatch(f"只有 class 1 的 cell 帶回歸目標: {self}")


@dataclass(frozen=True, eq=False)
class LabelGrid:
    """單一網格的標籤，以陣列保存（row-major，[i, j] = 第 i 列第 j 行）。

    class_ids (s, s) uint8、regression (s, s, 5) float64、vertical (s, s) uint8、scores (s, s) float64。
    非正樣本的 regression 與 vertical 為 0。
    """
    grid: GridSpec
    class_ids: NDArray[np.uint8]
    regression: NDArray[np.float64]
    vertical: NDArray[np.uint8]
    scores: NDArray[np.float64]

    def __post_init__(self) -> None:
        s = self.grid.size
        expected = {
            "class_ids": ((s, s), np.uint8),
            "regression": ((s, s, N_REGRESSION), np.float64),
            "vertical": ((s, s), np.uint8),
            "scores": ((s, s), np.float64),
        }
        for name, (shape, dtype) in expected.items():
            array = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            if array.shape != shape:
                raise ShapeMismatch(f"LabelGrid.{name} 應為 {shape}，收到 {array.shape}")
            object.__setattr__(self, name, array)

    @classmethod
    def empty(cls, grid: GridSpec) -> "LabelGrid":
        s = grid.size
        return cls(
            grid=grid,
            class_ids=np.zeros((s, s), dtype=np.uint8),
            regression=np.zeros((s, s, N_REGRESSION)),
            vertical=np.zeros((s, s), dtype=np.uint8),
            scores=np.zeros((s, s)),
        )

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def n_positive(self) -> int:
        return int(np.count_nonzero(self.class_ids == TEXT))

    def cell(self, i: int, j: int) -> CellLabel:
        class_id = int(self.class_ids[i, j])
        if class_id == TEXT:
            return CellLabel(class_id, float(self.scores[i, j]), tuple(self.regression[i, j].tolist()), int(self.vertical[i, j]))
        return CellLabel(class_id, float(self.scores[i, j]))

    def equals(self, other: "LabelGrid") -> bool:
        """逐位元比較（包含 -0.0 與 0.0 的差異）。"""
        if self.grid != other.grid:
            return False
        return all(
            getattr(self, name).tobytes() == getattr(other, name).tobytes()
            for name in ("class_ids", "regression", "vertical", "scores")
        )


def ellipse_scores(b: RotatedBox, xs: NDArray[np.float64], ys: NDArray[np.float64]) -> NDArray[np.float64]:
    """向量化的半橢圓分數。

    以 a = w/2、b' = h/2：
    A = a²sin²θ + b'²cos²θ，B = −2(a²−b'²)sinθcosθ，C = a²cos²θ + b'²sin²θ，F = a²b'²，
    s = sqrt(max(0, 1 − (Ax² + Bxy + Cy²)/F))，內切橢圓外為 0。
    """
    if b.w <= 0 or b.h <= 0:
        raise DegenerateBox(f"寬高必須為正: w={b.w}, h={b.h}")
    a2 = (b.w / 2) ** 2
    b2 = (b.h / 2) ** 2
    s, c = math.sin(b.theta), math.cos(b.theta)
    coef_a = a2 * s * s + b2 * c * c
    coef_b = -2 * (a2 - b2) * s * c
    coef_c = a2 * c * c + b2 * s * s

    x = np.asarray(xs, dtype=np.float64) - b.cx
    y = np.asarray(ys, dtype=np.float64) - b.cy
    q = (coef_a * x * x + coef_b * x * y + coef_c * y * y) / (a2 * b2)
    return np.sqrt(np.clip(1.0 - q, 0.0, None))


def ellipse_score(b: RotatedBox, p: Point2) -> float:
    return float(ellipse_scores(b, np.array([p.x]), np.array([p.y]))[0])


def classify_cell(score: float, alpha: float) -> int:
    """依橢圓分數決定網格的類別。

    Args
    ---
    score: ellipse_score 的結果
    alpha: 文字類別門檻，0.5 < alpha ≤ 1

    Returns
    ---
    int: score ≥ alpha 為 TEXT，0.5 ≤ score < alpha 為 AMBIGUOUS，其餘為 NEGATIVE
    """
    if score >= alpha:
        return TEXT
    if score >= AMBIGUOUS_SCORE:
        return AMBIGUOUS
    return NEGATIVE


def scale_match(box_height_px: float, grid: GridSpec, image_size_px: float) -> bool:
    """1 < h / c_h < 4（嚴格不等式），c_h = image_size_px / grid.size。"""
    ratio = box_height_px / (image_size_px / grid.size)
    return 1.0 < ratio < 4.0


def _cell_centers(grid: GridSpec, image_size_px: float) -> tuple[NDArray, NDArray]:
    cell = image_size_px / grid.size
    centers = (np.arange(grid.size) + 0.5) * cell
    return np.meshgrid(centers, centers)


def _build_grid(
    boxes: Sequence[RotatedBox],
    ignore: Sequence[bool],
    grid: GridSpec,
    alpha: float,
    image_size_px: float,
) -> LabelGrid:
    s = grid.size
    xs, ys = _cell_centers(grid, image_size_px)
    best_text = np.zeros((s, s))
    best_area = np.zeros((s, s))
    best_index = np.full((s, s), -1, dtype=np.int64)
    best_ignore = np.zeros((s, s))

    for k, box in enumerate(boxes):
        if not scale_match(box.h, grid, image_size_px):
            continue
        score = ellipse_scores(box, xs, ys)
        if ignore[k]:
            np.maximum(best_ignore, score, out=best_ignore)
            continue
        # 分數相同時取面積較大的框
        better = (score > best_text) | ((score == best_text) & (score > 0) & (box.area > best_area))
        best_text[better] = score[better]
        best_area[better] = box.area
        best_index[better] = k

    class_ids = np.zeros((s, s), dtype=np.uint8)
    class_ids[best_text >= AMBIGUOUS_SCORE] = AMBIGUOUS
    class_ids[best_text >= alpha] = TEXT
    from_ignore = (class_ids == NEGATIVE) & (best_ignore >= AMBIGUOUS_SCORE)
    class_ids[from_ignore] = AMBIGUOUS
    # ignore 造成的 class 2 分數壓在 α 之下，維持 class 2 ⇒ 0.5 ≤ score < α
    scores = np.where(from_ignore, np.minimum(best_ignore, np.nextafter(alpha, 0.0)), best_text)

    regression = np.zeros((s, s, N_REGRESSION))
    vertical = np.zeros((s, s), dtype=np.uint8)
    for i, j in np.argwhere(class_ids == TEXT):
        box = boxes[best_index[i, j]]
        anchor = encode_circle_anchor(box.scaled(1.0 / image_size_px))
        regression[i, j] = compute_delta(anchor, int(i), int(j), grid).regression
        vertical[i, j] = vertical_flag(box.theta)

    return LabelGrid(grid=grid, class_ids=class_ids, regression=regression, vertical=vertical, scores=scores)


def build_targets(
    boxes: Sequence[RotatedBox],
    pyramid: PyramidSpec,
    image_size_px: float,
    ignore: Optional[Sequence[bool]] = None,
) -> list[LabelGrid]:
    """為一張影像建立每個網格的 LabelGrid。

    Args
    ---
    boxes: 像素座標的旋轉矩形
    pyramid: 網格設定與 α
    image_size_px: 正方形輸入的邊長
    ignore: 與 boxes 等長的 ignore 旗標（"###" 或 difficult），只會產生 class 2

    Returns
    ---
    list[LabelGrid]: 與 pyramid.grids 同順序
    """
    flags = [False] * len(boxes) if ignore is None else list(ignore)
    if len(flags) != len(boxes):
        raise ShapeMismatch(f"ignore 旗標數量 {len(flags)} 與框數量 {len(boxes)} 不一致")
    grids = [_build_grid(boxes, flags, grid, pyramid.alpha, image_size_px) for grid in pyramid.grids]
    logger.debug(f"建立標籤: {len(boxes)} 個框，正樣本數 {[g.n_positive for g in grids]}")
    return grids


def build_targets_batch(
    scenes: Sequence[tuple[Sequence[RotatedBox], Sequence[bool]]],
    pyramid: PyramidSpec,
    image_size_px: float,
    n_jobs: int = 1,
) -> list[list[LabelGrid]]:
    """多張影像平行建立標籤，輸出順序與輸入相同。"""
    return Parallel(n_jobs=n_jobs)(
        delayed(build_targets)(boxes, pyramid, image_size_px, flags) for boxes, flags in scenes
    )
