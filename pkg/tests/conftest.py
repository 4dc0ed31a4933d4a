from pathlib import Path

import numpy as np
import pytest

from depthrec.geometry import DepthMap, Intrinsics


@pytest.fixture
def small_k() -> Intrinsics:
    return Intrinsics(fx=100.0, fy=100.0, cx=10.0, cy=6.0, width=20, height=12)


@pytest.fixture(scope="session")
def kitti_root() -> Path:
    return Path(__file__).parent / "data" / "kitti"


def random_depth_map(rng: np.random.Generator, height: int, width: int,
                     density: float = 0.7, lo: float = 0.5, hi: float = 60.0) -> DepthMap:
    """Random depth map with the given fraction of valid pixels."""
    vals = rng.uniform(lo, hi, size=(height, width))
    vals[rng.random((height, width)) > density] = 0.0
    return DepthMap(vals)


def smooth_depth_map(rng: np.random.Generator, height: int, width: int,
                     base: float = 12.0) -> DepthMap:
    """Fully valid, slowly varying depth field (sum of low-frequency waves)."""
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    vals = base + 2.0 * np.sin(u / width * 2.5 + rng.uniform(0, 6)) \
        + 1.5 * np.cos(v / height * 3.1 + rng.uniform(0, 6)) \
        + rng.uniform(-0.5, 0.5)
    return DepthMap(vals)
