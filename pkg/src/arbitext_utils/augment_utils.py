"""幾何資料增強：canvas 擴張、隨機裁切、水平翻轉、旋轉與 resize。

只處理標註的幾何；影像像素不在這裡處理。每次增強的隨機數都記在 `AugmentDraw`，
同一組 (seed, index) 必定得到同一個結果。
"""
import math
from collections.abc import Callable
from dataclasses import dataclass, replace
from functools import partial

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config_utils import get_rng
from .errors import EmptyResult
from .functional_utils import chain_steps, describe_step
from .geometry_utils import Quad, clip_polygon, min_area_rect, polygon_area
from .io_utils import Annotation, Sample

DEFAULT_ANGLES = (-90.0, -75.0, -60.0, -45.0, -30.0, -15.0, 0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0)
_FLIP_ORDER = [1, 0, 3, 2]
_TRIG_SNAP = 1e-12


class AugmentConfig(BaseModel):
    """資料增強設定。crop_scale 是裁切邊長相對原圖的比例，canvas 比例同理。"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    crop_scale_range: tuple[float, float] = (0.1, 1.0)
    flip_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    angle_set: tuple[float, ...] = DEFAULT_ANGLES
    canvas_range: tuple[float, float] = (1.0, 3.0)
    canvas_enabled: bool = False
    min_area_ratio: float = Field(default=0.25, ge=0.0, le=1.0)
    keep_at_least_one: bool = False
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "AugmentConfig":
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"crop_scale_range 必須滿足 0 < lo ≤ hi ≤ 1: {self.crop_scale_range}")
        lo, hi = self.canvas_range
        if not 1 <= lo <= hi:
            raise ValueError(f"canvas_range 必須滿足 1 ≤ lo ≤ hi: {self.canvas_range}")
        if not self.angle_set:
            raise ValueError("angle_set 不可為空")
        return self


@dataclass(frozen=True, slots=True)
class AugmentDraw:
    """一次增強抽到的所有隨機數，位置以「可移動範圍的比例」表示。"""
    index: int = 0
    canvas_ratio: float = 1.0
    canvas_x: float = 0.0
    canvas_y: float = 0.0
    crop_scale: float = 1.0
    crop_x: float = 0.0
    crop_y: float = 0.0
    flip: bool = False
    angle_deg: float = 0.0


def draw_augmentation(cfg: AugmentConfig, index: int) -> AugmentDraw:
    # 不論設定為何都抽同樣數量的隨機數，讓各欄位互不影響
    rng = get_rng(cfg.seed, index)
    canvas_ratio = float(rng.uniform(*cfg.canvas_range))
    canvas_x, canvas_y = rng.random(2).tolist()
    crop_scale = float(rng.uniform(*cfg.crop_scale_range))
    crop_x, crop_y = rng.random(2).tolist()
    flip = bool(rng.random() < cfg.flip_prob)
    angle = float(cfg.angle_set[int(rng.integers(len(cfg.angle_set)))])
    return AugmentDraw(
        index=index,
        canvas_ratio=canvas_ratio if cfg.canvas_enabled else 1.0,
        canvas_x=canvas_x,
        canvas_y=canvas_y,
        crop_scale=crop_scale,
        crop_x=crop_x,
        crop_y=crop_y,
        flip=flip,
        angle_deg=angle,
    )


def _map_quads(s: Sample, fn: Callable[[Quad], Quad], width: int, height: int) -> Sample:
    annotations = tuple(replace(a, quad=fn(a.quad)) for a in s.annotations)
    return Sample(s.image_id, width, height, annotations)


def place_on_canvas(s: Sample, ratio: float, fx: float = 0.0, fy: float = 0.0) -> Sample:
    """把影像放到 ratio 倍大的 canvas 上（其餘以平均像素填滿），位置由 (fx, fy) 決定。"""
    if ratio <= 1.0:
        return s
    width, height = round(s.width * ratio), round(s.height * ratio)
    dx, dy = math.floor(fx * (width - s.width)), math.floor(fy * (height - s.height))
    return _map_quads(s, lambda q: q.translate(dx, dy), width, height)


def _clip_annotation(a: Annotation, rect: np.ndarray, min_area_ratio: float) -> Annotation | None:
    area = a.quad.area()
    clipped = clip_polygon(a.quad.points, rect)
    clipped_area = polygon_area(clipped)
    if clipped_area >= area * (1 - 1e-9):
        return a
    if clipped_area < min_area_ratio * area:
        return None
    return replace(a, quad=min_area_rect(clipped).to_quad())


def crop_sample(
    s: Sample,
    scale: float,
    fx: float = 0.0,
    fy: float = 0.0,
    min_area_ratio: float = 0.25,
) -> Sample:
    """裁切邊長為原圖 scale 倍的區域。

    中心落在裁切區外的框丟掉；被切到的框以裁切後的多邊形重新擬合最小外接矩形，
    剩餘面積不足 min_area_ratio 者丟掉。擬合出的矩形原樣保留，角點可能略超出新影像。
    """
    width = max(1, round(s.width * scale))
    height = max(1, round(s.height * scale))
    if width >= s.width and height >= s.height:
        return s
    x0 = math.floor(fx * (s.width - width))
    y0 = math.floor(fy * (s.height - height))
    rect = np.array([[x0, y0], [x0 + width, y0], [x0 + width, y0 + height], [x0, y0 + height]], dtype=np.float64)

    kept = []
    for a in s.annotations:
        center = a.quad.center
        if not (x0 <= center.x <= x0 + width and y0 <= center.y <= y0 + height):
            continue
        clipped = _clip_annotation(a, rect, min_area_ratio)
        if clipped is None:
            continue
        kept.append(replace(clipped, quad=Quad(clipped.quad.points - (x0, y0))))
    return Sample(s.image_id, width, height, tuple(kept))


def flip_sample(s: Sample) -> Sample:
    """水平翻轉：x → W − x，角點重排維持順時針順序。"""
    def flip(q: Quad) -> Quad:
        points = q.points.copy()
        points[:, 0] = s.width - points[:, 0]
        return Quad(points[_FLIP_ORDER])
    return _map_quads(s, flip, s.width, s.height)


def _snap(v: float) -> float:
    if abs(v) < _TRIG_SNAP:
        return 0.0
    if abs(abs(v) - 1.0) < _TRIG_SNAP:
        return math.copysign(1.0, v)
    return v


def rotate_sample(s: Sample, angle_deg: float) -> Sample:
    """以影像中心旋轉 angle_deg 度（y 向下，正角度在螢幕上順時針），canvas 擴張到能容納整張圖。"""
    if angle_deg == 0:
        return s
    theta = math.radians(angle_deg)
    c, sn = _snap(math.cos(theta)), _snap(math.sin(theta))
    width = math.ceil(abs(s.width * c) + abs(s.height * sn) - 1e-9)
    height = math.ceil(abs(s.width * sn) + abs(s.height * c) - 1e-9)
    rotation = np.array([[c, -sn], [sn, c]])
    old_center = np.array([s.width / 2, s.height / 2])
    new_center = np.array([width / 2, height / 2])
    return _map_quads(s, lambda q: Quad((q.points - old_center) @ rotation.T + new_center), width, height)


def resize_sample(s: Sample, size: int) -> Sample:
    """縮放到 size×size 的正方形輸入。"""
    sx, sy = size / s.width, size / s.height
    return _map_quads(s, lambda q: q.scale(sx, sy), size, size)


def augment_sample(s: Sample, cfg: AugmentConfig, draw: AugmentDraw) -> Sample:
    """依序套用 canvas → crop → flip → rotate。

    Args
    ---
    s: 原始樣本
    cfg: 增強設定
    draw: `draw_augmentation(cfg, index)` 抽出的隨機數

    Returns
    ---
    Sample: 增強後的樣本；cfg.keep_at_least_one 為真且沒有標註留下時拋出 EmptyResult
    """
    steps = [
        partial(place_on_canvas, ratio=draw.canvas_ratio, fx=draw.canvas_x, fy=draw.canvas_y),
        partial(crop_sample, scale=draw.crop_scale, fx=draw.crop_x, fy=draw.crop_y, min_area_ratio=cfg.min_area_ratio),
    ]
    if draw.flip:
        steps.append(flip_sample)
    steps.append(partial(rotate_sample, angle_deg=draw.angle_deg))
    logger.debug(f"{s.image_id} 增強步驟: {' → '.join(describe_step(p) for p in steps)}")

    out = chain_steps(steps)(s)
    if cfg.keep_at_least_one and not out.annotations:
        raise EmptyResult(f"{s.image_id} 增強後沒有任何標註 (draw {draw.index})")
    return out
