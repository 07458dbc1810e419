"""Point cloud data model, PLY I/O, spatial indexing and normal estimation.

Positions are kept as float64 internally regardless of the on-disk precision
so that metric arithmetic downstream stays stable.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "PointCloud",
    "BoundingBox",
    "SpatialIndex",
    "PlyError",
    "load_ply",
    "save_ply",
    "bounding_box",
    "estimate_normals",
    "DEFAULT_NORMAL_K",
]

DEFAULT_NORMAL_K = 12


class PlyError(ValueError):
    """Malformed, truncated or unsupported PLY content."""


@dataclass(frozen=True)
class PointCloud:
    """N points with XYZ positions, 8-bit RGB colors and optional unit normals."""

    positions: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) uint8
    normals: np.ndarray | None = None  # (N, 3) float64, unit rows

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64))
        col = np.asarray(self.colors)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        if pos.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        if col.shape != pos.shape:
            raise ValueError(
                f"colors shape {col.shape} does not match positions {pos.shape}"
            )
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        col_int = np.asarray(col, dtype=np.int64)
        if np.any(col != col_int):
            raise ValueError("color components must be integers")
        if col_int.min() < 0 or col_int.max() > 255:
            raise ValueError("color components must lie in [0, 255]")
        col8 = np.ascontiguousarray(col_int.astype(np.uint8))
        nrm = self.normals
        if nrm is not None:
            nrm = np.ascontiguousarray(np.asarray(nrm, dtype=np.float64))
            if nrm.shape != pos.shape:
                raise ValueError("normals shape must match positions")
            lens = np.linalg.norm(nrm, axis=1)
            if np.any(np.abs(lens - 1.0) > 1e-6):
                raise ValueError("normals must be unit length within 1e-6")
            nrm.setflags(write=False)
        # immutable after construction: safe to share across threads
        pos.setflags(write=False)
        col8.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col8)
        object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def with_positions(self, positions: np.ndarray) -> "PointCloud":
        return dataclasses.replace(self, positions=positions, normals=None)

    def with_colors(self, colors: np.ndarray) -> "PointCloud":
        return dataclasses.replace(self, colors=colors)

    def with_normals(self, normals: np.ndarray) -> "PointCloud":
        return dataclasses.replace(self, normals=normals)


@dataclass(frozen=True)
class BoundingBox:
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64)
        hi = np.asarray(self.max_corner, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("corners must be 3-vectors")
        if np.any(lo > hi):
            raise ValueError("min_corner must be componentwise <= max_corner")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def side_lengths(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    @property
    def max_side(self) -> float:
        return float(self.side_lengths.max())

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.side_lengths))


def bounding_box(cloud: PointCloud) -> BoundingBox:
    """Componentwise extrema of the positions."""
    return BoundingBox(cloud.positions.min(axis=0), cloud.positions.max(axis=0))


# ---------------------------------------------------------------------------
# PLY serialization
# ---------------------------------------------------------------------------

_PLY_TYPE_SIZES = {
    "char": 1, "int8": 1, "uchar": 1, "uint8": 1,
    "short": 2, "int16": 2, "ushort": 2, "uint16": 2,
    "int": 4, "int32": 4, "uint": 4, "uint32": 4,
    "float": 4, "float32": 4, "double": 8, "float64": 8,
}
_PLY_NP_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_header(f) -> tuple[str, int, list[tuple[str, str]]]:
    line = f.readline().strip()
    if line != b"ply":
        raise PlyError("not a PLY file (missing 'ply' magic)")
    fmt = None
    vertex_count = None
    properties: list[tuple[str, str]] = []
    in_vertex = False
    while True:
        raw = f.readline()
        if not raw:
            raise PlyError("truncated header (no end_header)")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith("comment"):
            continue
        if line == "end_header":
            break
        parts = line.split()
        if parts[0] == "format":
            if parts[1] == "ascii":
                fmt = "ascii"
            elif parts[1] == "binary_little_endian":
                fmt = "binary_le"
            else:
                raise PlyError(f"unsupported PLY format '{parts[1]}'")
        elif parts[0] == "element":
            if parts[1] == "vertex":
                vertex_count = int(parts[2])
                in_vertex = True
            else:
                in_vertex = False
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise PlyError("list properties are not supported on vertices")
            ptype, pname = parts[1], parts[2]
            if ptype not in _PLY_TYPE_SIZES:
                raise PlyError(f"unknown property type '{ptype}'")
            properties.append((pname, ptype))
    if fmt is None:
        raise PlyError("header missing 'format' line")
    if vertex_count is None:
        raise PlyError("header missing 'element vertex' line")
    if vertex_count == 0:
        raise PlyError("PLY declares zero vertices")
    return fmt, vertex_count, properties


def load_ply(path: str | Path) -> PointCloud:
    """Read an ASCII or binary-little-endian PLY with xyz + rgb vertex data.

    Raises PlyError on malformed headers, missing attributes, type
    mismatches and truncated bodies.
    """
    path = Path(path)
    with open(path, "rb") as f:
        fmt, n, props = _parse_header(f)
        names = [p[0] for p in props]
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise PlyError(f"missing attribute '{axis}'")
            ptype = props[names.index(axis)][1]
            if _PLY_NP_TYPES[ptype] not in ("f4", "f8"):
                raise PlyError(f"property '{axis}' must be float or double, got {ptype}")
        for chan in ("red", "green", "blue"):
            if chan not in names:
                raise PlyError(f"missing attribute '{chan}'")
            ptype = props[names.index(chan)][1]
            if _PLY_NP_TYPES[ptype] != "u1":
                raise PlyError(f"property '{chan}' must be uchar, got {ptype}")

        if fmt == "binary_le":
            dtype = np.dtype([(nm, "<" + _PLY_NP_TYPES[tp]) for nm, tp in props])
            body = f.read(dtype.itemsize * n)
            if len(body) != dtype.itemsize * n:
                raise PlyError("truncated body")
            rec = np.frombuffer(body, dtype=dtype, count=n)
        else:
            rows = []
            for _ in range(n):
                raw = f.readline()
                if not raw:
                    raise PlyError("truncated body")
                fields = raw.split()
                if len(fields) < len(props):
                    raise PlyError("truncated body")
                rows.append(fields[: len(props)])
            arr = np.array(rows, dtype=np.float64)
            rec = {nm: arr[:, i] for i, (nm, _) in enumerate(props)}

        positions = np.stack(
            [np.asarray(rec["x"], dtype=np.float64),
             np.asarray(rec["y"], dtype=np.float64),
             np.asarray(rec["z"], dtype=np.float64)], axis=1)
        colors = np.stack(
            [np.asarray(rec["red"]), np.asarray(rec["green"]), np.asarray(rec["blue"])],
            axis=1).astype(np.int64)
    if colors.min() < 0 or colors.max() > 255:
        raise PlyError("color values out of uchar range")
    return PointCloud(positions=positions, colors=colors)


def save_ply(
    cloud: PointCloud,
    path: str | Path,
    mode: str = "binary_le",
    coord_dtype: str = "float",
) -> None:
    """Write the cloud as PLY; re-loadable by :func:`load_ply`.

    mode is 'ascii' or 'binary_le'. coord_dtype 'float' matches the
    conventional MPEG layout; 'double' preserves float64 positions
    bit-exactly in binary mode.
    """
    if mode not in ("ascii", "binary_le"):
        raise ValueError(f"unknown mode '{mode}'")
    if coord_dtype not in ("float", "double"):
        raise ValueError(f"coord_dtype must be 'float' or 'double', got '{coord_dtype}'")
    fmt_line = "ascii 1.0" if mode == "ascii" else "binary_little_endian 1.0"
    header = (
        "ply\n"
        f"format {fmt_line}\n"
        f"element vertex {len(cloud)}\n"
        f"property {coord_dtype} x\n"
        f"property {coord_dtype} y\n"
        f"property {coord_dtype} z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    np_coord = "<f4" if coord_dtype == "float" else "<f8"
    pos = cloud.positions.astype(np_coord)
    col = cloud.colors
    path = Path(path)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if mode == "binary_le":
            rec = np.empty(len(cloud), dtype=np.dtype(
                [("x", np_coord), ("y", np_coord), ("z", np_coord),
                 ("red", "u1"), ("green", "u1"), ("blue", "u1")]))
            for i, nm in enumerate(("x", "y", "z")):
                rec[nm] = pos[:, i]
            for i, nm in enumerate(("red", "green", "blue")):
                rec[nm] = col[:, i]
            f.write(rec.tobytes())
        else:
            digits = 9 if coord_dtype == "float" else 17
            lines = []
            for i in range(len(cloud)):
                x, y, z = pos[i]
                r, g, b = col[i]
                lines.append(f"{x:.{digits}g} {y:.{digits}g} {z:.{digits}g} {r} {g} {b}\n")
            f.write("".join(lines).encode("ascii"))


# ---------------------------------------------------------------------------
# Spatial index
# ---------------------------------------------------------------------------


class SpatialIndex:
    """k-d tree over one cloud's positions with deterministic tie handling.

    Ties at equal distance are broken by the lower point id so that every
    downstream correspondence is reproducible.
    """

    def __init__(self, positions: np.ndarray):
        pts = np.asarray(positions, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError("positions must be a non-empty (N, 3) array")
        self._points = pts
        self._tree = cKDTree(pts)

    @classmethod
    def from_cloud(cls, cloud: PointCloud) -> "SpatialIndex":
        return cls(cloud.positions)

    def __len__(self) -> int:
        return self._points.shape[0]

    def k_nearest(self, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Ids and distances of the k nearest points, sorted by (distance, id)."""
        n = len(self)
        if not 1 <= k <= n:
            raise ValueError(f"k={k} out of range [1, {n}]")
        query = np.asarray(query, dtype=np.float64).reshape(3)
        kk = min(n, k + 16)
        while True:
            dists, ids = self._tree.query(query, k=kk)
            dists = np.atleast_1d(dists)
            ids = np.atleast_1d(ids)
            # all candidates tied with the k-th smallest must be present
            if kk == n or dists[-1] > dists[k - 1]:
                break
            kk = min(n, kk * 2)
        order = np.lexsort((ids, dists))
        return ids[order][:k], dists[order][:k]

    def nearest(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized 1-NN with the (distance, id) tie rule per query row."""
        queries = np.asarray(queries, dtype=np.float64)
        squeeze = queries.ndim == 1
        queries = np.atleast_2d(queries)
        n = len(self)
        k0 = min(n, 4)
        dists, ids = self._tree.query(queries, k=k0)
        if k0 == 1:
            dists = dists[:, None]
            ids = ids[:, None]
        best_d = dists[:, 0].copy()
        best_i = ids[:, 0].copy()
        tied = dists == best_d[:, None]
        # lower id wins among exact distance ties
        id_pool = np.where(tied, ids, n)
        best_i = id_pool.min(axis=1)
        unresolved = np.flatnonzero((k0 < n) & tied.all(axis=1))
        for row in unresolved:
            rid, _ = self.k_nearest(queries[row], 1)
            best_i[row] = rid[0]
        if squeeze:
            return best_i[:1][0], best_d[:1][0]
        return best_i, best_d

    def neighborhoods(self, queries: np.ndarray, k: int) -> np.ndarray:
        """Plain batched kNN ids (no tie post-processing), shape (M, k)."""
        n = len(self)
        if not 1 <= k <= n:
            raise ValueError(f"k={k} out of range [1, {n}]")
        _, ids = self._tree.query(np.atleast_2d(queries), k=k)
        if k == 1:
            ids = ids[:, None]
        return ids


def k_nearest(index: SpatialIndex, query: np.ndarray, k: int) -> np.ndarray:
    """Ids of the k nearest points to `query`, ties broken by lower id."""
    ids, _ = index.k_nearest(query, k)
    return ids


# ---------------------------------------------------------------------------
# Normal estimation
# ---------------------------------------------------------------------------


def estimate_normals(
    cloud: PointCloud, k: int = DEFAULT_NORMAL_K
) -> tuple[PointCloud, np.ndarray]:
    """PCA plane-fit normals from each point's k-neighborhood (self included).

    The normal is the eigenvector of the smallest covariance eigenvalue,
    oriented away from the neighborhood centroid. Degenerate neighborhoods
    (coincident or collinear points) receive the default normal (0, 0, 1)
    and are flagged in the returned boolean mask.
    """
    n = len(cloud)
    if not 3 <= k <= n:
        raise ValueError(f"k={k} out of range [3, {n}]")
    index = SpatialIndex.from_cloud(cloud)
    nbr_ids = index.neighborhoods(cloud.positions, k)  # (N, k)
    nbrs = cloud.positions[nbr_ids]  # (N, k, 3)
    centroids = nbrs.mean(axis=1)  # (N, 3)
    centered = nbrs - centroids[:, None, :]
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending eigenvalues
    normals = eigvecs[:, :, 0].copy()

    scale = np.maximum(eigvals[:, 2], 1e-300)
    degenerate = (eigvals[:, 1] <= 1e-12 * scale) | (eigvals[:, 2] <= 1e-30)

    # orient away from the neighborhood centroid; canonical sign when ambiguous
    outward = np.einsum("ni,ni->n", normals, cloud.positions - centroids)
    flip = outward < 0
    ambiguous = np.abs(outward) <= 1e-12 * np.sqrt(scale)
    if np.any(ambiguous):
        comp = np.argmax(np.abs(normals[ambiguous]), axis=1)
        lead = normals[ambiguous, comp]
        flip[np.flatnonzero(ambiguous)] = lead < 0
    normals[flip] *= -1.0

    lens = np.linalg.norm(normals, axis=1)
    ok = lens > 0
    normals[ok] /= lens[ok, None]
    normals[degenerate] = (0.0, 0.0, 1.0)
    return cloud.with_normals(normals), degenerate
