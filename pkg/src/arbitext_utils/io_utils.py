"""標註與偵測結果的讀寫，以及訓練目標檔與預測檔的序列化。

目標檔格式（little-endian）::

    magic "ATGT" | uint16 版本 | uint32 manifest 長度 | manifest（UTF-8 JSON）
    每個網格依序：class_ids uint8 (s·s) | vertical uint8 (s·s)
                 | scores float64 (s·s) | regression float64 (s·s·5)，皆為 row-major
    最後 32 bytes 為前面所有內容的 SHA-256
"""
import hashlib
import math
import re
import struct
import zipfile
import zlib
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, TextIO

import numpy as np
from loguru import logger
from pydantic import BaseModel, ValidationError

from .anchor_utils import GridSpec
from .errors import CorruptFile, MalformedLine, NonFinite, VersionMismatch
from .geometry_utils import Quad, rect_corners
from .loss_utils import PredictionGrid
from .nms_utils import Detection
from .target_utils import N_REGRESSION, LabelGrid

ICDAR_IGNORE = "###"
TARGET_MAGIC = b"ATGT"
TARGET_VERSION = 1
_HEADER = struct.Struct("<4sHI")
_DIGEST_SIZE = hashlib.sha256().digest_size
_ID_PATTERN = re.compile(r"^(?:gt|res)_(?:img_)?(?P<id>.+)$")
_FIELD_SEP = r"(?:\s*,\s*|\s+)"
_ICDAR13_PATTERN = re.compile(
    r"^\s*" + _FIELD_SEP.join([r"([^\s,]+)"] * 4) + rf'(?:{_FIELD_SEP}"(?P<text>.*)")?\s*$'
)

GtFormat = Literal["icdar", "icdar13", "td500"]
Sink = str | Path | TextIO


@dataclass(frozen=True)
class Annotation:
    quad: Quad
    text: str = ""
    ignore: bool = False


@dataclass(frozen=True)
class Sample:
    image_id: str
    width: int
    height: int
    annotations: tuple[Annotation, ...] = ()


# --------------------------------------------------------------------------- #
# parsers
# --------------------------------------------------------------------------- #

def _parse_floats(fields: Sequence[str], line_no: Optional[int]) -> list[float]:
    try:
        values = [float(f) for f in fields]
    except ValueError as e:
        raise MalformedLine(f"無法解析數值: {fields!r}", line_no) from e
    if not all(math.isfinite(v) for v in values):
        raise MalformedLine(f"數值必須為有限值: {fields!r}", line_no)
    return values


def parse_icdar_line(line: str, line_no: Optional[int] = None) -> Annotation:
    """解析 ICDAR 2015 的一行：8 個座標 + 文字（文字中的逗號保留）。

    Examples
    ---
    >>> parse_icdar_line("0,0,10,0,10,10,0,10,###").ignore
    True
    """
    parts = line.rstrip("\r\n").split(",", 8)
    if len(parts) < 8:
        raise MalformedLine(f"需要 8 個座標欄位，只有 {len(parts)} 個", line_no)
    coords = _parse_floats(parts[:8], line_no)
    text = parts[8] if len(parts) > 8 else ""
    return Annotation(Quad(coords), text, text == ICDAR_IGNORE)


def parse_icdar13_line(line: str, line_no: Optional[int] = None) -> Annotation:
    """解析 ICDAR 2013 的一行：`xmin ymin xmax ymax "text"`。

    訓練集以空白分隔、測試集以 `, ` 分隔，兩種都接受；文字去掉外層引號，可省略。

    Examples
    ---
    >>> parse_icdar13_line('38, 43, 920, 215, "Tiredness"').quad.flat()
    [38.0, 43.0, 920.0, 43.0, 920.0, 215.0, 38.0, 215.0]
    """
    match = _ICDAR13_PATTERN.match(line.rstrip("\r\n"))
    if match is None:
        raise MalformedLine(f"需要 4 個座標與可選的引號文字: {line!r}", line_no)
    x0, y0, x1, y1 = _parse_floats(match.groups()[:4], line_no)
    if x0 >= x1 or y0 >= y1:
        raise MalformedLine(f"需要 xmin < xmax 且 ymin < ymax: {(x0, y0, x1, y1)}", line_no)
    text = match.group("text") or ""
    return Annotation(Quad([x0, y0, x1, y0, x1, y1, x0, y1]), text, text == ICDAR_IGNORE)


def parse_td500_line(line: str, line_no: Optional[int] = None) -> Annotation:
    """解析 MSRA-TD500 的一行：index difficulty x y w h θ。

    (x, y, w, h) 是旋轉前的軸對齊框，以其中心旋轉 θ（弧度）；difficulty == 1 視為 ignore。
    """
    fields = line.split()
    if len(fields) != 7:
        raise MalformedLine(f"需要 7 個欄位，收到 {len(fields)} 個", line_no)
    try:
        int(fields[0])
        difficulty = int(fields[1])
    except ValueError as e:
        raise MalformedLine(f"index 與 difficulty 必須為整數: {fields[:2]!r}", line_no) from e
    x, y, w, h, theta = _parse_floats(fields[2:], line_no)
    if w <= 0 or h <= 0:
        raise MalformedLine(f"寬高必須為正: w={w}, h={h}", line_no)
    try:
        quad = Quad(rect_corners(x + w / 2, y + h / 2, w, h, theta))
    except NonFinite as e:
        raise MalformedLine(str(e), line_no) from e
    return Annotation(quad, "", difficulty == 1)


def parse_detection_line(line: str, line_no: Optional[int] = None) -> Detection:
    """解析 `x1,y1,...,x4,y4[,score]`，省略分數時視為 1.0。"""
    parts = line.strip().split(",")
    if len(parts) not in (8, 9):
        raise MalformedLine(f"需要 8 個座標與可選的分數，收到 {len(parts)} 個欄位", line_no)
    values = _parse_floats(parts, line_no)
    score = values[8] if len(values) == 9 else 1.0
    if score <= 0:
        raise MalformedLine(f"分數必須為正: {score}", line_no)
    return Detection(Quad(values[:8]), score)


def _read_lines(path: str | Path) -> list[tuple[int, str]]:
    # utf-8-sig 吃掉 BOM；universal newline 同時處理 CRLF 與 LF
    with open(path, encoding="utf-8-sig") as f:
        return [(no, line) for no, line in enumerate(f.read().splitlines(), start=1) if line.strip()]


def read_icdar_gt(path: str | Path) -> list[Annotation]:
    return [parse_icdar_line(line, no) for no, line in _read_lines(path)]


def read_icdar13_gt(path: str | Path) -> list[Annotation]:
    return [parse_icdar13_line(line, no) for no, line in _read_lines(path)]


def read_td500_gt(path: str | Path) -> list[Annotation]:
    return [parse_td500_line(line, no) for no, line in _read_lines(path)]


def read_detections(path: str | Path) -> list[Detection]:
    return [parse_detection_line(line, no) for no, line in _read_lines(path)]


def image_id_from_path(path: str | Path) -> str:
    """`gt_img_12.txt` / `res_img_12.txt` → "12"；其他檔名取 stem。"""
    stem = Path(path).stem
    match = _ID_PATTERN.match(stem)
    return match.group("id") if match else stem


def load_gt_dir(directory: str | Path, fmt: GtFormat = "icdar") -> dict[str, list[Annotation]]:
    """讀取整個 ground truth 資料夾，key 為影像 id。"""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"找不到資料夾: {directory}")

    match fmt:
        case "icdar":
            paths, reader = sorted(directory.glob("gt_*.txt")), read_icdar_gt
        case "icdar13":
            paths, reader = sorted(directory.glob("gt_*.txt")), read_icdar13_gt
        case "td500":
            paths, reader = sorted(directory.glob("*.gt")), read_td500_gt
        case _:
            raise ValueError(f"未知的標註格式: {fmt}")

    result = {image_id_from_path(p): reader(p) for p in paths}
    logger.info(f"讀取 {len(result)} 個標註檔: {directory}")
    return result


def load_detection_dir(directory: str | Path) -> dict[str, list[Detection]]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"找不到資料夾: {directory}")
    result = {image_id_from_path(p): read_detections(p) for p in sorted(directory.glob("res_*.txt"))}
    logger.info(f"讀取 {len(result)} 個偵測結果檔: {directory}")
    return result


# --------------------------------------------------------------------------- #
# writers
# --------------------------------------------------------------------------- #

def _round_half_up(v: float) -> int:
    return math.floor(v + 0.5)


def format_detection_line(det: Detection) -> str:
    coords = ",".join(str(_round_half_up(v)) for v in det.quad.flat())
    return f"{coords},{det.score:.4f}"


def _format_coord(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:.3f}"


def format_icdar_line(annotation: Annotation) -> str:
    coords = ",".join(_format_coord(v) for v in annotation.quad.flat())
    text = ICDAR_IGNORE if annotation.ignore else annotation.text
    return f"{coords},{text}"


def _detection_order(det: Detection) -> tuple:
    # 分數由高到低，其次大網格優先、row-major；沒有來源的排在同分的最後（穩定排序）
    if det.source is None:
        return (-det.score, 1, 0, 0, 0)
    size, i, j = det.source
    return (-det.score, 0, -size, i, j)


def _write_lines(lines: Iterable[str], sink: Sink) -> None:
    text = "".join(f"{line}\n" for line in lines)
    if isinstance(sink, (str, Path)):
        Path(sink).parent.mkdir(parents=True, exist_ok=True)
        with open(sink, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    else:
        sink.write(text)


def write_detections(dets: Sequence[Detection], sink: Sink) -> None:
    """寫出 ICDAR 繳交格式 `x1,y1,...,x4,y4,score`：座標四捨五入到整數像素、分數 4 位小數。"""
    _write_lines((format_detection_line(d) for d in sorted(dets, key=_detection_order)), sink)


def write_annotations(annotations: Sequence[Annotation], sink: Sink) -> None:
    """寫出 ICDAR 標註格式，一行一個標註，忽略框的文字為 `###`。

    Args
    ---
    annotations: 要寫出的標註
    sink: 檔案路徑或可寫入的文字串流
    """
    _write_lines((format_icdar_line(a) for a in annotations), sink)


# --------------------------------------------------------------------------- #
# target container
# --------------------------------------------------------------------------- #

class TargetManifest(BaseModel):
    format_version: int = TARGET_VERSION
    image_id: str = ""
    image_size_px: float = 384.0
    alpha: float = 0.7
    grids: list[GridSpec] = []


@dataclass(frozen=True)
class TargetFile:
    manifest: TargetManifest
    grids: list[LabelGrid]


def dump_targets(
    grids: Sequence[LabelGrid],
    image_id: str = "",
    image_size_px: float = 384.0,
    alpha: float = 0.7,
) -> bytes:
    manifest = TargetManifest(
        image_id=image_id,
        image_size_px=image_size_px,
        alpha=alpha,
        grids=[g.grid for g in grids],
    )
    manifest_bytes = manifest.model_dump_json().encode("utf-8")
    chunks = [_HEADER.pack(TARGET_MAGIC, TARGET_VERSION, len(manifest_bytes)), manifest_bytes]
    for g in grids:
        chunks += [
            g.class_ids.astype("u1").tobytes(),
            g.vertical.astype("u1").tobytes(),
            g.scores.astype("<f8").tobytes(),
            g.regression.astype("<f8").tobytes(),
        ]
    body = b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def parse_targets(data: bytes) -> TargetFile:
    if len(data) < _HEADER.size + _DIGEST_SIZE:
        raise CorruptFile(f"目標檔過短: {len(data)} bytes")
    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFile("目標檔 checksum 不符")

    magic, version, manifest_len = _HEADER.unpack_from(body)
    if magic != TARGET_MAGIC:
        raise CorruptFile(f"目標檔 magic 錯誤: {magic!r}")
    if version != TARGET_VERSION:
        raise VersionMismatch(f"目標檔版本 {version}，程式支援版本 {TARGET_VERSION}")

    offset = _HEADER.size
    try:
        manifest = TargetManifest.model_validate_json(body[offset:offset + manifest_len])
    except ValidationError as e:
        raise CorruptFile(f"manifest 無法解析: {e}") from e
    offset += manifest_len

    grids = []
    for grid_spec in manifest.grids:
        n = grid_spec.size * grid_spec.size
        sizes = (n, n, 8 * n, 8 * n * N_REGRESSION)
        if offset + sum(sizes) > len(body):
            raise CorruptFile(f"網格 {grid_spec.size} 的資料被截斷")
        class_ids = np.frombuffer(body, "u1", n, offset)
        vertical = np.frombuffer(body, "u1", n, offset + sizes[0])
        scores = np.frombuffer(body, "<f8", n, offset + sizes[0] + sizes[1])
        regression = np.frombuffer(body, "<f8", n * N_REGRESSION, offset + sizes[0] + sizes[1] + sizes[2])
        offset += sum(sizes)
        grids.append(LabelGrid(
            grid=grid_spec,
            class_ids=class_ids.reshape(grid_spec.size, grid_spec.size).copy(),
            regression=regression.astype(np.float64).reshape(grid_spec.size, grid_spec.size, N_REGRESSION),
            vertical=vertical.reshape(grid_spec.size, grid_spec.size).copy(),
            scores=scores.astype(np.float64).reshape(grid_spec.size, grid_spec.size),
        ))
    if offset != len(body):
        raise CorruptFile(f"目標檔有 {len(body) - offset} bytes 多餘資料")
    return TargetFile(manifest=manifest, grids=grids)


def save_targets(
    grids: Sequence[LabelGrid],
    path: str | Path,
    image_id: str = "",
    image_size_px: float = 384.0,
    alpha: float = 0.7,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dump_targets(grids, image_id, image_size_px, alpha))
    logger.debug(f"目標檔儲存至: {path}")


def load_targets(path: str | Path) -> TargetFile:
    """讀取 save_targets 寫出的目標檔。

    Args
    ---
    path: 目標檔路徑

    Returns
    ---
    TargetFile: manifest 與各網格的標籤；格式或 checksum 錯誤時丟出 CorruptFile
    """
    return parse_targets(Path(path).read_bytes())


# --------------------------------------------------------------------------- #
# predictions (.npz)
# --------------------------------------------------------------------------- #

def save_predictions(grids: Sequence[PredictionGrid], path: str | Path) -> None:
    """把網路輸出存成 .npz，每個網格三個陣列 logits_k / regression_k / vertical_k。"""
    arrays = {
        "sizes": np.array([g.size for g in grids], dtype=np.int64),
        "r_a": np.array([g.grid.r_a for g in grids], dtype=np.float64),
    }
    for k, g in enumerate(grids):
        arrays[f"logits_{k}"] = g.logits
        arrays[f"regression_{k}"] = g.regression
        arrays[f"vertical_{k}"] = g.vertical_logits
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def _open_npz(path: str | Path) -> np.lib.npyio.NpzFile:
    try:
        data = np.load(path, allow_pickle=False)
    except (ValueError, EOFError, zipfile.BadZipFile) as e:
        raise CorruptFile(f"無法讀取預測檔 {path}: {e}") from e
    if not isinstance(data, np.lib.npyio.NpzFile):
        raise CorruptFile(f"{path} 不是 .npz 預測檔")
    return data


def load_predictions(path: str | Path) -> list[PredictionGrid]:
    """讀回 `save_predictions` 寫出的 .npz。

    Args
    ---
    path (str|Path): 預測檔路徑

    Returns
    ---
    list[PredictionGrid]: 依儲存順序排列的各網格輸出
    """
    with _open_npz(path) as data:
        try:
            sizes, r_as = data["sizes"], data["r_a"]
            members = [
                (data[f"logits_{k}"], data[f"regression_{k}"], data[f"vertical_{k}"])
                for k in range(len(sizes))
            ]
        except KeyError as e:
            raise CorruptFile(f"預測檔缺少欄位: {e}") from e
        except (ValueError, EOFError, zipfile.BadZipFile, zlib.error) as e:
            raise CorruptFile(f"預測檔內容損毀: {e}") from e
    return [
        PredictionGrid(
            grid=GridSpec(size=int(size), r_a=float(r_a)),
            logits=logits,
            regression=regression,
            vertical_logits=vertical,
        )
        for (size, r_a), (logits, regression, vertical) in zip(zip(sizes, r_as), members)
    ]
