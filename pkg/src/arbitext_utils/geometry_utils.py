"""旋轉矩形、四邊形與凸多邊形 IoU。

座標系統採影像慣例：y 軸向下，旋轉 +θ 在螢幕上為順時針。
四邊形角點順序固定為

    p1 = R(θ)·(-w/2, -h/2), p2 = R(θ)·(w/2, -h/2),
    p3 = R(θ)·(w/2,  h/2),  p4 = R(θ)·(-w/2, h/2)   (再平移到中心)

θ=0 時即左上、右上、右下、左下，與 ICDAR 標註一致，
在 y 向下座標中 shoelace 面積為正。
"""
import math
from dataclasses import dataclass

import cv2
import numba as nb
import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateBox, DegenerateQuad, NonConvexQuad, NonFinite, ShapeMismatch

EPSILON = 1e-12
SQUARE_TOLERANCE = 1e-9
MIN_RECT_RATIO = 1e-6
HALF_PI = math.pi / 2
QUARTER_PI = math.pi / 4

_UNIT_CORNERS = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])


def fold_angle(theta: float) -> float:
    """將角度折疊到 (-π/2, π/2]（以 π 為週期）。"""
    if -HALF_PI < theta <= HALF_PI:
        return theta
    folded = (theta + HALF_PI) % math.pi - HALF_PI
    return HALF_PI if folded <= -HALF_PI else folded


@dataclass(frozen=True, slots=True)
class Point2:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise NonFinite(f"Point2 座標必須為有限值: ({self.x}, {self.y})")


@dataclass(frozen=True, eq=False)
class Quad:
    """四個角點的四邊形，內部以唯讀 (4, 2) float64 陣列保存。"""
    points: NDArray[np.float64]

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64)
        if pts.size != 8:
            raise ShapeMismatch(f"Quad 需要 4 個角點，收到 shape {pts.shape}")
        pts = np.ascontiguousarray(pts.reshape(4, 2))
        if not np.all(np.isfinite(pts)):
            raise NonFinite(f"Quad 角點必須為有限值: {pts.tolist()}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def corners(self) -> tuple[Point2, Point2, Point2, Point2]:
        return tuple(Point2(float(x), float(y)) for x, y in self.points)  # type: ignore[return-value]

    @property
    def center(self) -> Point2:
        cx, cy = self.points.mean(axis=0)
        return Point2(float(cx), float(cy))

    def flat(self) -> list[float]:
        return self.points.ravel().tolist()

    def signed_area(self) -> float:
        return float(_polygon_area(self.points, 4))

    def area(self) -> float:
        return abs(self.signed_area())

    def translate(self, dx: float, dy: float) -> "Quad":
        return Quad(self.points + (dx, dy))

    def scale(self, sx: float, sy: float | None = None) -> "Quad":
        return Quad(self.points * (sx, sx if sy is None else sy))

    def allclose(self, other: "Quad", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.points, other.points, rtol=0.0, atol=atol))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Quad):
            return NotImplemented
        return bool(np.array_equal(self.points, other.points))

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Quad({self.points.tolist()})"


@dataclass(frozen=True, slots=True)
class RotatedBox:
    """中心、長邊 w、短邊 h 與長邊方向 θ 表示的旋轉矩形。

    建構時會正規化：w ≥ h，θ ∈ (-π/2, π/2]；正方形取 |θ| 較小者（±π/4 取 +π/4）。
    """
    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        values = (self.cx, self.cy, self.w, self.h, self.theta)
        if not all(math.isfinite(v) for v in values):
            raise NonFinite(f"RotatedBox 欄位必須為有限值: {values}")
        if self.w <= 0 or self.h <= 0:
            raise DegenerateBox(f"RotatedBox 的寬高必須為正: w={self.w}, h={self.h}")

        w, h, theta = float(self.w), float(self.h), fold_angle(float(self.theta))
        if w < h:
            w, h = h, w
            theta = fold_angle(theta + HALF_PI)
        if w == h and (abs(theta) > QUARTER_PI or theta == -QUARTER_PI):
            theta = fold_angle(theta - HALF_PI)

        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "theta", theta)

    @property
    def area(self) -> float:
        return self.w * self.h

    def scaled(self, factor: float) -> "RotatedBox":
        return RotatedBox(self.cx * factor, self.cy * factor, self.w * factor, self.h * factor, self.theta)

    def to_quad(self) -> Quad:
        return quad_from_rbox(self)


# --------------------------------------------------------------------------- #
# numba kernels
# --------------------------------------------------------------------------- #

@nb.njit()
def _polygon_area(points, n):
    total = 0.0
    for k in range(n):
        nxt = (k + 1) % n
        total += points[k, 0] * points[nxt, 1] - points[nxt, 0] * points[k, 1]
    return 0.5 * total


@nb.njit()
def _positively_oriented(points, n):
    out = np.empty((n, 2))
    flip = _polygon_area(points, n) < 0.0
    for k in range(n):
        src = n - 1 - k if flip else k
        out[k, 0] = points[src, 0]
        out[k, 1] = points[src, 1]
    return out


@nb.njit()
def _clip_convex(subject, n_subject, clip, n_clip):
    """Sutherland–Hodgman：以凸多邊形 clip 裁切 subject，兩者皆須為正向。"""
    capacity = 4 * (n_subject + n_clip)
    out = np.empty((capacity, 2))
    work = np.empty((capacity, 2))
    for k in range(n_subject):
        out[k, 0] = subject[k, 0]
        out[k, 1] = subject[k, 1]
    n_out = n_subject

    for e in range(n_clip):
        if n_out == 0:
            break
        ax = clip[e, 0]
        ay = clip[e, 1]
        ex = clip[(e + 1) % n_clip, 0] - ax
        ey = clip[(e + 1) % n_clip, 1] - ay

        for k in range(n_out):
            work[k, 0] = out[k, 0]
            work[k, 1] = out[k, 1]
        n_in = n_out
        n_out = 0

        sx = work[n_in - 1, 0]
        sy = work[n_in - 1, 1]
        s_side = ex * (sy - ay) - ey * (sx - ax)
        for k in range(n_in):
            px = work[k, 0]
            py = work[k, 1]
            p_side = ex * (py - ay) - ey * (px - ax)
            if (p_side >= 0.0) != (s_side >= 0.0) and n_out < capacity:
                t = s_side / (s_side - p_side)
                out[n_out, 0] = sx + t * (px - sx)
                out[n_out, 1] = sy + t * (py - sy)
                n_out += 1
            if p_side >= 0.0 and n_out < capacity:
                out[n_out, 0] = px
                out[n_out, 1] = py
                n_out += 1
            sx = px
            sy = py
            s_side = p_side

    return out, n_out


@nb.njit()
def _precedes(a, b):
    for k in range(a.shape[0]):
        for c in range(2):
            if a[k, c] < b[k, c]:
                return True
            if a[k, c] > b[k, c]:
                return False
    return True


@nb.njit()
def _intersection_area(a, b):
    pa = _positively_oriented(a, 4)
    pb = _positively_oriented(b, 4)
    # 固定裁切方向，讓 area(a, b) 與 area(b, a) 逐位元相同
    if not _precedes(pa, pb):
        pa, pb = pb, pa
    clipped, n = _clip_convex(pa, 4, pb, 4)
    if n < 3:
        return 0.0
    return abs(_polygon_area(clipped, n))


@nb.njit()
def quad_iou_kernel(a, b):
    inter = _intersection_area(a, b)
    union = abs(_polygon_area(a, 4)) + abs(_polygon_area(b, 4)) - inter
    if union <= EPSILON:
        return 0.0
    return min(1.0, max(0.0, inter / union))


# --------------------------------------------------------------------------- #
# public operations
# --------------------------------------------------------------------------- #

def rect_corners(cx: float, cy: float, w: float, h: float, theta: float) -> NDArray[np.float64]:
    """以中心旋轉 w×h 矩形，回傳 (4, 2) 角點（固定順序，見模組說明）。"""
    c, s = math.cos(theta), math.sin(theta)
    rotation = np.array([[c, -s], [s, c]])
    return (_UNIT_CORNERS * (w, h)) @ rotation.T + (cx, cy)


def quad_from_rbox(b: RotatedBox) -> Quad:
    """旋轉矩形轉為四邊形。

    Returns
    ---
    Quad: 依左上、右上、右下、左下排列（θ = 0 時），面積為正
    """
    return Quad(rect_corners(b.cx, b.cy, b.w, b.h, b.theta))


def rbox_from_quad(q: Quad, tolerance: float | None = None) -> RotatedBox:
    """將近似矩形的四邊形擬合成 RotatedBox。

    Args
    ---
    q: 四邊形
    tolerance: 若提供，對邊長度相對差或鄰邊夾角偏離直角（弧度）超過此值時拋出 DegenerateQuad

    Returns
    ---
    RotatedBox: 中心為角點平均；w/h 為兩組對邊的平均長度；θ 為長邊方向
    """
    pts = q.points
    edges = np.roll(pts, -1, axis=0) - pts
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    if lengths.min() < EPSILON:
        raise DegenerateQuad(f"四邊形有長度小於 {EPSILON} 的邊: {q}")

    if tolerance is not None:
        _check_rectangular(edges, lengths, tolerance)

    len_a = 0.5 * (lengths[0] + lengths[2])
    len_b = 0.5 * (lengths[1] + lengths[3])
    dir_a = edges[0] - edges[2]
    dir_b = edges[1] - edges[3]
    theta_a = math.atan2(dir_a[1], dir_a[0])
    theta_b = math.atan2(dir_b[1], dir_b[0])
    cx, cy = pts.mean(axis=0)

    if abs(len_a - len_b) <= SQUARE_TOLERANCE * max(len_a, len_b):
        side = 0.5 * (len_a + len_b)
        return RotatedBox(cx, cy, side, side, theta_a)
    if len_a > len_b:
        return RotatedBox(cx, cy, len_a, len_b, theta_a)
    return RotatedBox(cx, cy, len_b, len_a, theta_b)


def _check_rectangular(edges: NDArray, lengths: NDArray, tolerance: float) -> None:
    for k in range(2):
        if abs(lengths[k] - lengths[k + 2]) > tolerance * max(lengths[k], lengths[k + 2]):
            raise DegenerateQuad(f"對邊長度差超過容許值 {tolerance}")
    for k in range(4):
        nxt = (k + 1) % 4
        cos_angle = float(edges[k] @ edges[nxt]) / (lengths[k] * lengths[nxt])
        if abs(math.asin(min(1.0, abs(cos_angle)))) > tolerance:
            raise DegenerateQuad(f"鄰邊夾角偏離直角超過容許值 {tolerance}")


def _edge_turns(pts: NDArray) -> NDArray:
    edges = np.roll(pts, -1, axis=0) - pts
    nxt = np.roll(edges, -1, axis=0)
    return edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]


def normalize_quad(q: Quad) -> Quad:
    """回傳正向、非自交的凸四邊形。

    自交（蝴蝶結）的輸入會依對重心的角度重新排序；仍為凹形則拋出 NonConvexQuad。
    """
    pts = np.asarray(_positively_oriented(q.points, 4))
    scale = max(float(np.ptp(pts[:, 0])), float(np.ptp(pts[:, 1])), 1.0)
    slack = -EPSILON * scale * scale

    if np.all(_edge_turns(pts) >= slack):
        return Quad(pts)

    centered = pts - pts.mean(axis=0)
    order = np.argsort(np.arctan2(centered[:, 1], centered[:, 0]), kind="stable")
    reordered = pts[order]
    if np.all(_edge_turns(reordered) >= slack):
        return Quad(reordered)
    raise NonConvexQuad(f"四邊形不是凸多邊形: {q}")


def signed_area(q: Quad) -> float:
    return q.signed_area()


def quad_area(q: Quad) -> float:
    return q.area()


def polygon_area(points: NDArray[np.float64]) -> float:
    """任意頂點數的多邊形面積（絕對值），少於 3 個頂點時為 0。"""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if len(pts) < 3:
        return 0.0
    return abs(float(_polygon_area(pts, len(pts))))


def polygon_intersection_area(a: Quad, b: Quad) -> float:
    """兩個凸四邊形的交集面積（≥ 0，不相交回傳 0）。"""
    return float(_intersection_area(a.points, b.points))


def iou(a: Quad, b: Quad) -> float:
    """inter / (area_a + area_b - inter)，對稱且落在 [0, 1]；兩者皆退化時為 0。"""
    return float(quad_iou_kernel(a.points, b.points))


def clip_polygon(subject: NDArray[np.float64], clip: NDArray[np.float64]) -> NDArray[np.float64]:
    """以凸多邊形 clip 裁切凸多邊形 subject，回傳 (k, 2) 的正向頂點（可能為空）。"""
    subject = np.ascontiguousarray(subject, dtype=np.float64)
    clip = np.ascontiguousarray(clip, dtype=np.float64)
    if len(subject) < 3 or len(clip) < 3:
        return np.empty((0, 2))
    out, n = _clip_convex(
        _positively_oriented(subject, len(subject)), len(subject),
        _positively_oriented(clip, len(clip)), len(clip),
    )
    return out[:n].copy()


def min_area_rect(points: NDArray[np.float64]) -> RotatedBox:
    """任意點集（內部取凸包）的最小面積外接矩形，由 `cv2.minAreaRect` 計算。

    cv2 的寬邊方向為 (cos θ, sin θ)，與本模組 y 向下、順時針為正的慣例相同，
    因此直接建構 RotatedBox，角點再以 float64 展開，結果必為精確的矩形。

    Args
    ---
    points (NDArray[np.float64]): (k, 2) 頂點

    Returns
    ---
    RotatedBox: 正規化後的旋轉矩形
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0 or not np.all(np.isfinite(pts)):
        raise DegenerateQuad(f"無法擬合矩形的頂點: {pts.tolist()}")
    (cx, cy), (w, h), angle = cv2.minAreaRect(pts.astype(np.float32))
    if min(w, h) <= MIN_RECT_RATIO * max(w, h, EPSILON):
        raise DegenerateQuad(f"頂點共線或重合，無法擬合矩形: w={w}, h={h}")
    return RotatedBox(cx, cy, w, h, math.radians(angle))
