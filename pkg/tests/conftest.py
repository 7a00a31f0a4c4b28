import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from arbitext_utils.config_utils import ArbitextConfig, get_rng
from arbitext_utils.geometry_utils import RotatedBox

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def random_box(rng: np.random.Generator, low: float = 4.0, high: float = 300.0, extent: float = 500.0) -> RotatedBox:
    w, h = rng.uniform(low, high, size=2)
    cx, cy = rng.uniform(-extent, extent, size=2)
    # (-π/2, π/2]
    theta = math.pi / 2 - rng.uniform(0.0, math.pi)
    return RotatedBox(float(cx), float(cy), float(w), float(h), float(theta))


def angle_distance(a: float, b: float) -> float:
    """角度以 π 為週期的距離。"""
    d = (a - b) % math.pi
    return min(d, math.pi - d)


@st.composite
def rotated_boxes(draw, low: float = 4.0, high: float = 300.0, extent: float = 500.0) -> RotatedBox:
    w = draw(st.floats(min_value=low, max_value=high))
    h = draw(st.floats(min_value=low, max_value=high))
    cx = draw(st.floats(min_value=-extent, max_value=extent))
    cy = draw(st.floats(min_value=-extent, max_value=extent))
    theta = draw(st.floats(min_value=-math.pi / 2, max_value=math.pi / 2, exclude_min=True))
    return RotatedBox(cx, cy, w, h, theta)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def rng() -> np.random.Generator:
    return get_rng(20240601)


@pytest.fixture
def config() -> ArbitextConfig:
    return ArbitextConfig()
