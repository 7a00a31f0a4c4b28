"""circle anchor 表示法：(x, y, a, r, θ) 與四邊形、網格 delta 之間的轉換。

座標一律以正規化的 [0, 1] 影像座標表示，第 (i, j) 格的中心在 ((j+0.5)/w, (i+0.5)/w)。
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .array_utils import one_hot_decode_array
from .errors import InvalidAnchor, NonFinite, NonPositive, ShapeMismatch
from .geometry_utils import QUARTER_PI, Quad, RotatedBox, fold_angle

ARCSIN_SLACK = 1e-9
VERTICAL_TOLERANCE = 1e-12


class GridSpec(BaseModel):
    """w×w 的特徵網格，r_a 為 anchor 尺度因子（實際尺度為 r_a / w）。"""
    model_config = ConfigDict(frozen=True)

    size: int = Field(ge=1)
    r_a: float = Field(default=1.5, gt=0)

    @property
    def anchor_scale(self) -> float:
        return self.r_a / self.size


@dataclass(frozen=True, slots=True)
class CircleAnchor:
    x: float
    y: float
    a: float
    r: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        values = (self.x, self.y, self.a, self.r, self.theta)
        if not all(math.isfinite(v) for v in values):
            raise NonFinite(f"CircleAnchor 欄位必須為有限值: {values}")
        if self.a <= 0 or self.r <= 0:
            raise NonPositive(f"CircleAnchor 的面積與半徑必須為正: a={self.a}, r={self.r}")
        if self.a > 2 * self.r ** 2 * (1 + ARCSIN_SLACK):
            raise InvalidAnchor(f"面積 a={self.a} 超過 2r²={2 * self.r ** 2}")
        object.__setattr__(self, "theta", fold_angle(self.theta))


@dataclass(frozen=True, slots=True)
class AnchorDelta:
    """單一 cell 的網路輸出：五個回歸量，加上可選的分類 logits 與 vertical logits。"""
    dx: float
    dy: float
    da: float
    dr: float
    dtheta: float
    confidence: tuple[float, ...] = ()
    vertical_logits: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        values = (*self.regression, *self.confidence, *self.vertical_logits)
        if not all(math.isfinite(v) for v in values):
            raise NonFinite(f"AnchorDelta 欄位必須為有限值: {values}")

    @property
    def regression(self) -> tuple[float, float, float, float, float]:
        return (self.dx, self.dy, self.da, self.dr, self.dtheta)

    @property
    def vertical(self) -> Optional[int]:
        if not self.vertical_logits:
            return None
        return int(one_hot_decode_array(np.asarray(self.vertical_logits)))


def decode_circle_anchor(c: CircleAnchor) -> Quad:
    """circle anchor → 四邊形。

    α = ½·arcsin(a / 2r²)，p2 = r(cos(α+θ), sin(α+θ))，p3 = (r·cos(α−θ), −r·sin(α−θ))，
    角點依序為 −p2、p3、p2、−p3，最後平移到 (x, y)。輸出角點順序與 `quad_from_rbox` 相同。

    Examples
    ---
    >>> decode_circle_anchor(CircleAnchor(0, 0, a=8, r=math.sqrt(5))).points.round(9).tolist()
    [[-2.0, -1.0], [2.0, -1.0], [2.0, 1.0], [-2.0, 1.0]]
    """
    ratio = c.a / (2 * c.r ** 2)
    if ratio > 1 + ARCSIN_SLACK:
        raise InvalidAnchor(f"a/(2r²)={ratio} > 1")
    alpha = 0.5 * math.asin(min(ratio, 1.0))

    p2 = (c.r * math.cos(alpha + c.theta), c.r * math.sin(alpha + c.theta))
    p3 = (c.r * math.cos(alpha - c.theta), -c.r * math.sin(alpha - c.theta))
    points = np.array([
        [-p2[0], -p2[1]],
        [p3[0], p3[1]],
        [p2[0], p2[1]],
        [-p3[0], -p3[1]],
    ])
    return Quad(points + (c.x, c.y))


def encode_circle_anchor(b: RotatedBox) -> CircleAnchor:
    """將旋轉矩形編碼為圓錨點。

    Args
    ---
    b: 旋轉矩形，w ≥ h

    Returns
    ---
    CircleAnchor: 圓心為矩形中心，a = w·h，r 為半對角線長，θ 沿用矩形角度
    """
    return CircleAnchor(b.cx, b.cy, b.w * b.h, math.hypot(b.w, b.h) / 2, b.theta)


def _check_cell(cell_i: int, cell_j: int, g: GridSpec) -> None:
    if not (0 <= cell_i < g.size and 0 <= cell_j < g.size):
        raise ShapeMismatch(f"cell ({cell_i}, {cell_j}) 不在 {g.size}×{g.size} 網格內")


def apply_delta(d: AnchorDelta, cell_i: int, cell_j: int, g: GridSpec) -> CircleAnchor:
    """網格 delta → 正規化座標的 circle anchor。

    x = (dx·r_a + j + 0.5)/w，y = (dy·r_a + i + 0.5)/w，
    r = exp(dr)·r_a/w，a = exp(da)·r_a/w，θ = dθ 折疊到 (-π/2, π/2]。
    """
    _check_cell(cell_i, cell_j, g)
    try:
        r = math.exp(d.dr) * g.anchor_scale
        a = math.exp(d.da) * g.anchor_scale
    except OverflowError as e:
        raise NonFinite(f"exp 溢位: dr={d.dr}, da={d.da}") from e

    x = (d.dx * g.r_a + cell_j + 0.5) / g.size
    y = (d.dy * g.r_a + cell_i + 0.5) / g.size
    if not all(math.isfinite(v) for v in (x, y, r, a)):
        raise NonFinite(f"apply_delta 結果非有限值: x={x}, y={y}, r={r}, a={a}")
    return CircleAnchor(x, y, a, r, fold_angle(d.dtheta))


def compute_delta(c: CircleAnchor, cell_i: int, cell_j: int, g: GridSpec) -> AnchorDelta:
    """`apply_delta` 的反函數，只填回歸欄位。"""
    if c.r <= 0 or c.a <= 0:
        raise NonPositive(f"r 與 a 必須為正: r={c.r}, a={c.a}")
    _check_cell(cell_i, cell_j, g)
    return AnchorDelta(
        dx=(c.x * g.size - cell_j - 0.5) / g.r_a,
        dy=(c.y * g.size - cell_i - 0.5) / g.r_a,
        da=math.log(c.a / g.anchor_scale),
        dr=math.log(c.r / g.anchor_scale),
        dtheta=c.theta,
    )


def vertical_flag(theta: float) -> int:
    """|θ| ≤ 45° 為 0（含邊界），否則為 1。"""
    return 0 if abs(theta) <= QUARTER_PI + VERTICAL_TOLERANCE else 1
