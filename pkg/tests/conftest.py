import numpy as np
import pytest

from pcqa.pcio import PointCloud


def random_cloud(rng: np.random.Generator, n: int = 200, extent: float = 50.0,
                 jitter: float = 0.0) -> PointCloud:
    """Uniform random positions with random colors."""
    pos = rng.uniform(0, extent, (n, 3))
    if jitter:
        pos += rng.normal(0, jitter, pos.shape)
    col = rng.integers(0, 256, (n, 3))
    return PointCloud(pos, col)


def grid_cloud(rng: np.random.Generator, n: int = 300, extent: int = 60) -> PointCloud:
    """Distinct integer-grid positions (MPEG-style), random colors."""
    pts = np.unique(rng.integers(0, extent, (n * 3, 3)), axis=0)
    rng.shuffle(pts)
    pts = pts[:n]
    col = rng.integers(0, 256, (len(pts), 3))
    return PointCloud(pts.astype(float), col)


def shell_cloud(rng: np.random.Generator, n: int = 200, radius: float = 8.0) -> PointCloud:
    """Surface-like cloud on an integer sphere shell; compact kernel maps."""
    v = rng.normal(size=(n * 4, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    pts = np.unique(np.floor(v * radius).astype(int), axis=0)
    rng.shuffle(pts)
    pts = pts[:n]
    col = rng.integers(0, 256, (len(pts), 3))
    return PointCloud(pts.astype(float), col)


def textured_ref(rng: np.random.Generator, n: int = 1400, extent: int = 120) -> PointCloud:
    """Blobby surface with smooth color gradients; rich enough for FR metrics."""
    base = rng.normal(size=(n * 2, 3))
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    r = extent / 2 * (0.8 + 0.2 * rng.random(len(base)))[:, None]
    pts = np.unique(np.floor(base * r + extent / 2).astype(int), axis=0)
    rng.shuffle(pts)
    pts = pts[:n].astype(float)
    col = np.stack([
        128 + 100 * np.sin(pts[:, 0] / 17),
        128 + 100 * np.cos(pts[:, 1] / 23),
        128 + 100 * np.sin(pts[:, 2] / 13)], axis=1)
    col = np.clip(np.round(col + rng.normal(0, 8, col.shape)), 0, 255)
    return PointCloud(pts, col)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
