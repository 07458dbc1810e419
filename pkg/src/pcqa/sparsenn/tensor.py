"""Sparse tensor representation and kernel maps for sub-manifold convolution.

A sparse tensor is a coordinate list (x, y, z, b) plus a feature matrix; a
kernel map lists, per kernel offset, the (input row, output row) pairs that
realize the convolution's gather/scatter. Rows are kept in a canonical
order so identical coordinate sets always produce identical summation
order, independent of input row permutation.
"""

from __future__ import annotations

import itertools

import numpy as np

from ..pcio import PointCloud

__all__ = ["SparseTensor", "KernelMap", "KERNEL_OFFSETS", "voxelize", "build_kernel_map"]

# 3x3x3 kernel offsets in fixed lexicographic order; index 13 is the center
KERNEL_OFFSETS = np.array(
    list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64
)


class SparseTensor:
    """Unique integer coordinates (N, 4) with per-row features (N, C_f)."""

    def __init__(self, coords: np.ndarray, feats: np.ndarray):
        coords = np.asarray(coords, dtype=np.int64)
        feats = np.asarray(feats, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 4:
            raise ValueError(f"coords must be (N, 4), got {coords.shape}")
        if feats.ndim != 2 or feats.shape[0] != coords.shape[0]:
            raise ValueError("feats row count must match coords")
        if coords.shape[0] < 1:
            raise ValueError("sparse tensor must contain at least one site")

        self._mins = coords.min(axis=0)
        spans = coords.max(axis=0) - self._mins + 3  # +-1 margin for offset probes
        if np.prod(spans.astype(np.float64)) >= 2**62:
            raise ValueError("coordinate extent too large to index")
        self._spans = spans
        keys = self._pack(coords)
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        if np.any(keys[1:] == keys[:-1]):
            raise ValueError("coordinate rows must be unique (including batch index)")
        self.coords = coords[order]
        self.feats = np.ascontiguousarray(feats[order])
        self._keys = keys
        self.coords.setflags(write=False)

    def _pack(self, coords: np.ndarray) -> np.ndarray:
        shifted = coords - self._mins + 1
        s = self._spans
        return ((shifted[:, 0] * s[1] + shifted[:, 1]) * s[2] + shifted[:, 2]) * s[3] + shifted[:, 3]

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def n_channels(self) -> int:
        return self.feats.shape[1]

    def lookup(self, query: np.ndarray) -> np.ndarray:
        """Row index of each query coordinate, -1 where unoccupied."""
        query = np.asarray(query, dtype=np.int64)
        inside = np.all((query >= self._mins - 1) & (query <= self._mins + self._spans - 2), axis=1)
        rows = np.full(len(query), -1, dtype=np.int64)
        if inside.any():
            keys = self._pack(query[inside])
            pos = np.searchsorted(self._keys, keys)
            pos = np.minimum(pos, len(self._keys) - 1)
            hit = self._keys[pos] == keys
            found = np.where(hit, pos, -1)
            rows[np.flatnonzero(inside)] = found
        return rows

class KernelMap:
    """Per-offset (input row, output row) pairs, output rows ascending."""

    def __init__(self, pairs: list[tuple[np.ndarray, np.ndarray]]):
        self.pairs = pairs

    def __len__(self) -> int:
        return len(self.pairs)

    def pair_counts(self) -> list[int]:
        return [len(p[0]) for p in self.pairs]


def voxelize(cloud: PointCloud, voxel_size: float = 1.0, batch_index: int = 0) -> SparseTensor:
    """Quantize positions to a voxel grid; duplicate sites merge with mean
    features. Features are RGB / 255 - 0.5 per channel."""
    if voxel_size <= 0:
        raise ValueError("voxel size must be positive")
    coords3 = np.floor(cloud.positions / voxel_size).astype(np.int64)
    feats = cloud.colors.astype(np.float64) / 255.0 - 0.5

    uniq, inverse = np.unique(coords3, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse)
    merged = np.zeros((len(uniq), 3))
    for c in range(3):
        merged[:, c] = np.bincount(inverse, weights=feats[:, c]) / counts
    coords4 = np.concatenate(
        [uniq, np.full((len(uniq), 1), batch_index, dtype=np.int64)], axis=1)
    return SparseTensor(coords4, merged)


def build_kernel_map(tensor: SparseTensor, kernel_size: int = 3) -> KernelMap:
    """Sub-manifold kernel map: output sites equal input sites; for each
    offset i the pairs are (row of u+i, row of u) over occupied u+i."""
    if kernel_size != 3:
        raise ValueError("only 3x3x3 kernels are supported")
    n = len(tensor)
    out_rows_all = np.arange(n, dtype=np.int64)
    pairs = []
    probe = np.zeros(4, dtype=np.int64)
    for offset in KERNEL_OFFSETS:
        probe[:3] = offset
        in_rows = tensor.lookup(tensor.coords + probe)
        valid = in_rows >= 0
        pairs.append((in_rows[valid], out_rows_all[valid]))
    return KernelMap(pairs)
