import os
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml
from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import InvalidConfig


class ArbitextConfig(BaseModel):
    """整個 CLI 共用的設定。

    預設值依序被設定檔與 CLI 參數覆蓋，參考 `load_config`。
    """
    model_config = ConfigDict(extra="forbid")

    grid_sizes: list[int] = Field(default_factory=lambda: [48, 24, 12, 6, 3, 1])
    image_size: float = Field(default=384.0, gt=0)
    alpha: float = Field(default=0.7, gt=0.5, le=1.0)
    r_a: float = Field(default=1.5, gt=0)
    lambda_loc: float = Field(default=1.0, ge=0)
    lambda_vertical: float = Field(default=1.0, ge=0)
    hnm_ratio: float = Field(default=3.0, gt=0)
    confidence: float = Field(default=0.5, ge=0, le=1.0)
    merge_iou: float = Field(default=0.5, ge=0, le=1.0)
    final_iou: float = Field(default=0.5, ge=0, le=1.0)
    eval_iou: float = Field(default=0.5, gt=0, le=1.0)
    n_jobs: int = 1
    log_level: str = "INFO"

    @field_validator("grid_sizes")
    @classmethod
    def _check_sizes(cls, sizes: list[int]) -> list[int]:
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError("grid_sizes 必須為正整數且不可為空")
        if any(a <= b for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"grid_sizes 必須嚴格遞減: {sizes}")
        return sizes


def filter_fields(source: dict, cls: type) -> dict:
    """
    過濾字典中的 key，僅保留在 Pydantic 模型中有定義的欄位。

    Args
    ---
    source (dict): 欲過濾的來源字典。
    cls (Type): Pydantic 模型類別，用來判斷哪些欄位需要保留。

    Returns
    ---
    dict: 僅包含 cls 中定義欄位的字典
    """
    model_field_keys = cls.model_fields.keys()
    return {k: v for k, v in source.items() if k in model_field_keys}


def merge_configs(base: dict, overrides: dict) -> dict:
    """
    合併兩組參數設定，`overrides` 的內容會覆蓋 `base` 中的對應項。

    Args
    ---
    base (dict): 預設的設定內容
    overrides (dict): 要覆蓋的設定內容

    Returns
    ---
    dict: 合併後的設定
    """
    return {**base, **overrides}


def load_yaml(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def load_config(path: Optional[str | Path] = None, overrides: Optional[dict[str, Any]] = None) -> ArbitextConfig:
    """讀取設定：預設值 < 設定檔 < overrides。

    Args
    ---
    path: YAML 設定檔路徑，未指定時讀取環境變數 ARBITEXT_CONFIG（支援 .env）。
    overrides: 通常是 CLI 參數，值為 None 的項目會被忽略。

    Returns
    ---
    ArbitextConfig: 驗證後的設定
    """
    load_dotenv()
    if path is None and os.getenv("ARBITEXT_CONFIG"):
        path = os.environ["ARBITEXT_CONFIG"]

    from_file: dict = {}
    if path is not None:
        try:
            from_file = load_yaml(path)
        except yaml.YAMLError as e:
            raise InvalidConfig(f"設定檔不是合法的 YAML: {path}") from e
        if not isinstance(from_file, dict):
            raise InvalidConfig(f"設定檔必須是 key-value 格式: {path}")
        unknown = [k for k in from_file if k not in ArbitextConfig.model_fields]
        if unknown:
            logger.warning(f"設定檔中有未知欄位，將被忽略: {unknown}")
        from_file = filter_fields(from_file, ArbitextConfig)
        logger.debug(f"讀取設定檔: {path}")

    cleaned = {k: v for k, v in (overrides or {}).items() if v is not None}
    merged = merge_configs(from_file, filter_fields(cleaned, ArbitextConfig))

    if "log_level" not in merged and os.getenv("ARBITEXT_LOG_LEVEL"):
        merged["log_level"] = os.environ["ARBITEXT_LOG_LEVEL"]

    try:
        return ArbitextConfig.model_validate(merged)
    except ValidationError as e:
        raise InvalidConfig(str(e)) from e


def get_rng(seed: int, *stream: int) -> np.random.Generator:
    """根據 seed 與 stream id 取得 numpy 的隨機數生成器。

    同一組 (seed, *stream) 永遠得到同一串隨機數，與呼叫順序無關。

    Examples
    ---
    >>> get_rng(0, 3).random() == get_rng(0, 3).random()
    True
    """
    return np.random.default_rng([seed, *stream])
