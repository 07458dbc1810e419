"""Full-reference quality metrics used for pseudo-MOS generation.

Implements the geometric p2point / p2plane errors with MSE and Hausdorff
pooling in PSNR form, and the luma-weighted PSNRyuv color metric.
Externally computed metric scores (e.g. structural metrics from other
tools) are ingested from CSV and carried alongside.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .colors import rgb_to_ycbcr
from .distort import affects_geometry
from .pcio import DEFAULT_NORMAL_K, PointCloud, SpatialIndex, bounding_box, estimate_normals

__all__ = [
    "M_P2PO", "M_P2PL", "H_P2PO", "H_P2PL", "PSNR_YUV", "H_PSNR_YUV",
    "BUILTIN_METRICS", "GEOMETRY_METRICS", "PSNR_CAP_DB",
    "MetricScore", "metric_order_key", "metric_applicable",
    "p2point", "p2plane", "psnr_from_geometry", "psnr_yuv",
    "compute_metric", "ingest_external_scores",
]

M_P2PO = "M-p2po"
M_P2PL = "M-p2pl"
H_P2PO = "H-p2po"
H_P2PL = "H-p2pl"
PSNR_YUV = "PSNRyuv"
H_PSNR_YUV = "H-PSNRyuv"

BUILTIN_METRICS = (M_P2PO, M_P2PL, H_P2PO, H_P2PL, PSNR_YUV, H_PSNR_YUV)
GEOMETRY_METRICS = frozenset({M_P2PO, M_P2PL, H_P2PO, H_P2PL})

PSNR_CAP_DB = 100.0
_CAP_RATIO = 1e-10  # errors below peak^2 * ratio saturate at the cap


@dataclass(frozen=True)
class MetricScore:
    metric: str
    value: float
    reference_id: str
    degraded_id: str

    def __post_init__(self):
        if not self.metric:
            raise ValueError("metric name must be non-empty")
        if not self.reference_id or not self.degraded_id:
            raise ValueError("provenance ids must be non-empty")
        if not math.isfinite(self.value):
            raise ValueError(f"metric value must be finite, got {self.value}")


def metric_order_key(metric: str) -> tuple[int, str]:
    """Deterministic ordering: builtins first in canonical order, then names."""
    if metric in BUILTIN_METRICS:
        return (BUILTIN_METRICS.index(metric), "")
    return (len(BUILTIN_METRICS), metric)


def metric_applicable(metric: str, distortion_id: int) -> bool:
    """Geometry metrics are undefined for distortions that keep positions fixed."""
    if metric in GEOMETRY_METRICS:
        return affects_geometry(distortion_id)
    return True


def _pool(errors: np.ndarray, pooling: str) -> float:
    if pooling == "mse":
        return float(errors.mean())
    if pooling == "hausdorff":
        return float(errors.max())
    raise ValueError(f"unknown pooling '{pooling}'")


def _p2point_oneway(reference: PointCloud, degraded: PointCloud, pooling: str) -> float:
    index = SpatialIndex.from_cloud(reference)
    _, dists = index.nearest(degraded.positions)
    return _pool(dists**2, pooling)


def p2point(
    reference: PointCloud,
    degraded: PointCloud,
    pooling: str = "mse",
    symmetric: bool = False,
) -> float:
    """Squared nearest-neighbor distance statistic of degraded vs reference.

    The symmetric form (max over both directions) is what the final metric
    scores use.
    """
    if len(reference) == 0 or len(degraded) == 0:
        raise ValueError("clouds must be non-empty")
    fwd = _p2point_oneway(reference, degraded, pooling)
    if not symmetric:
        return fwd
    return max(fwd, _p2point_oneway(degraded, reference, pooling))


def _with_normals(cloud: PointCloud, k: int) -> PointCloud:
    if cloud.normals is not None:
        return cloud
    cloud, _ = estimate_normals(cloud, k=min(k, len(cloud)))
    return cloud


def _p2plane_oneway(reference: PointCloud, degraded: PointCloud, pooling: str) -> float:
    index = SpatialIndex.from_cloud(reference)
    ids, _ = index.nearest(degraded.positions)
    vectors = degraded.positions - reference.positions[ids]
    proj = np.einsum("ni,ni->n", vectors, reference.normals[ids])
    return _pool(proj**2, pooling)


def p2plane(
    reference: PointCloud,
    degraded: PointCloud,
    pooling: str = "mse",
    symmetric: bool = False,
    normal_k: int = DEFAULT_NORMAL_K,
) -> float:
    """p2point errors projected on the reference surface normals."""
    if len(reference) == 0 or len(degraded) == 0:
        raise ValueError("clouds must be non-empty")
    ref = _with_normals(reference, normal_k)
    fwd = _p2plane_oneway(ref, degraded, pooling)
    if not symmetric:
        return fwd
    deg = _with_normals(degraded, normal_k)
    return max(fwd, _p2plane_oneway(deg, reference, pooling))


def _capped_psnr(peak_sq: float, error: float) -> float:
    if error < peak_sq * _CAP_RATIO:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(peak_sq / error), PSNR_CAP_DB)


def psnr_from_geometry(error: float, reference: PointCloud) -> float:
    """PSNR in dB with peak = reference bounding-box diagonal, capped at 100."""
    if error < 0:
        raise ValueError("error must be non-negative")
    peak = bounding_box(reference).diagonal
    if peak <= 0:
        raise ValueError("zero-extent reference bounding box")
    return _capped_psnr(peak * peak, error)


def _yuv_errors_oneway(reference: PointCloud, degraded: PointCloud, pooling: str) -> np.ndarray:
    index = SpatialIndex.from_cloud(reference)
    ids, _ = index.nearest(degraded.positions)
    ref_ycc = rgb_to_ycbcr(reference.colors[ids].astype(np.float64))
    deg_ycc = rgb_to_ycbcr(degraded.colors.astype(np.float64))
    sq = (deg_ycc - ref_ycc) ** 2
    if pooling == "mse":
        return sq.mean(axis=0)
    if pooling == "hausdorff":
        return sq.max(axis=0)
    raise ValueError(f"unknown pooling '{pooling}'")


def psnr_yuv(reference: PointCloud, degraded: PointCloud, pooling: str = "mse") -> float:
    """Symmetric luma-weighted color PSNR: (6*Y + Cb + Cr) / 8, capped at 100 dB."""
    if len(reference) == 0 or len(degraded) == 0:
        raise ValueError("clouds must be non-empty")
    fwd = _yuv_errors_oneway(reference, degraded, pooling)
    bwd = _yuv_errors_oneway(degraded, reference, pooling)
    errors = np.maximum(fwd, bwd)
    peak_sq = 255.0 * 255.0
    psnr = [_capped_psnr(peak_sq, float(e)) for e in errors]
    return (6.0 * psnr[0] + psnr[1] + psnr[2]) / 8.0


def compute_metric(metric: str, reference: PointCloud, degraded: PointCloud) -> float:
    """Evaluate one builtin metric id on a (reference, degraded) pair."""
    if metric == M_P2PO:
        return psnr_from_geometry(p2point(reference, degraded, "mse", symmetric=True), reference)
    if metric == H_P2PO:
        return psnr_from_geometry(p2point(reference, degraded, "hausdorff", symmetric=True), reference)
    if metric == M_P2PL:
        return psnr_from_geometry(p2plane(reference, degraded, "mse", symmetric=True), reference)
    if metric == H_P2PL:
        return psnr_from_geometry(p2plane(reference, degraded, "hausdorff", symmetric=True), reference)
    if metric == PSNR_YUV:
        return psnr_yuv(reference, degraded, "mse")
    if metric == H_PSNR_YUV:
        return psnr_yuv(reference, degraded, "hausdorff")
    raise ValueError(f"unknown builtin metric '{metric}'")


def ingest_external_scores(path: str | Path) -> list[MetricScore]:
    """Read externally computed scores; values pass through without rescaling."""
    path = Path(path)
    required = {"metric_name", "reference_id", "degraded_id", "value"}
    scores: list[MetricScore] = []
    seen: set[tuple[str, str]] = set()
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            missing = sorted(required - set(reader.fieldnames or ()))
            raise ValueError(f"score CSV missing columns: {', '.join(missing)}")
        for row in reader:
            try:
                value = float(row["value"])
            except ValueError as exc:
                raise ValueError(f"non-numeric value {row['value']!r}") from exc
            key = (row["metric_name"], row["degraded_id"])
            if key in seen:
                raise ValueError(f"duplicate score for (metric, degraded) key {key}")
            seen.add(key)
            scores.append(MetricScore(
                metric=row["metric_name"], value=value,
                reference_id=row["reference_id"], degraded_id=row["degraded_id"]))
    return scores
