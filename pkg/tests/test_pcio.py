import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcqa.pcio import (
    PointCloud, PlyError, SpatialIndex, bounding_box, estimate_normals,
    k_nearest, load_ply, save_ply,
)

from conftest import grid_cloud, random_cloud


# ---------------------------------------------------------------------------
# PointCloud invariants
# ---------------------------------------------------------------------------


def test_cloud_requires_matching_shapes():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), np.zeros((2, 3)))


def test_cloud_rejects_out_of_range_color():
    with pytest.raises(ValueError, match=r"\[0, 255\]"):
        PointCloud(np.zeros((1, 3)), [[0, 0, 256]])


def test_cloud_rejects_empty():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)), np.zeros((0, 3)))


def test_cloud_rejects_non_unit_normals():
    with pytest.raises(ValueError, match="unit length"):
        PointCloud(np.zeros((1, 3)), [[1, 2, 3]], normals=[[0.5, 0.0, 0.0]])


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


def test_ascii_ply_known_values(tmp_path):
    text = (
        "ply\nformat ascii 1.0\nelement vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
        "0 0 0 255 0 0\n"
        "1 0 0 0 255 0\n"
        "0 1 0.5 0 0 255\n"
    )
    path = tmp_path / "a.ply"
    path.write_text(text)
    cloud = load_ply(path)
    assert len(cloud) == 3
    np.testing.assert_array_equal(cloud.positions, [[0, 0, 0], [1, 0, 0], [0, 1, 0.5]])
    np.testing.assert_array_equal(cloud.colors, [[255, 0, 0], [0, 255, 0], [0, 0, 255]])


def test_single_point_header_count(tmp_path):
    cloud = PointCloud([[1.0, 2.0, 3.0]], [[10, 20, 30]])
    path = tmp_path / "one.ply"
    save_ply(cloud, path, mode="ascii")
    assert b"element vertex 1" in path.read_bytes()
    again = load_ply(path)
    assert len(again) == 1


@pytest.mark.parametrize("mode", ["ascii", "binary_le"])
def test_roundtrip_float32_grid(tmp_path, rng, mode):
    # float-precision storage: bit exact when inputs are f32 representable
    for trial in range(20):
        cloud = grid_cloud(rng, n=50)
        path = tmp_path / f"{mode}_{trial}.ply"
        save_ply(cloud, path, mode=mode)
        back = load_ply(path)
        np.testing.assert_array_equal(back.positions, cloud.positions)
        np.testing.assert_array_equal(back.colors, cloud.colors)


def test_roundtrip_binary_double_bit_exact(tmp_path, rng):
    for trial in range(20):
        cloud = random_cloud(rng, n=64)
        path = tmp_path / f"d{trial}.ply"
        save_ply(cloud, path, mode="binary_le", coord_dtype="double")
        back = load_ply(path)
        assert np.array_equal(back.positions, cloud.positions)  # bit exact
        np.testing.assert_array_equal(back.colors, cloud.colors)


def test_roundtrip_ascii_close(tmp_path, rng):
    cloud = random_cloud(rng, n=100)
    path = tmp_path / "a.ply"
    save_ply(cloud, path, mode="ascii")
    back = load_ply(path)
    np.testing.assert_allclose(back.positions, cloud.positions, atol=1e-4, rtol=1e-6)


def test_missing_color_property_errors(tmp_path):
    text = (
        "ply\nformat ascii 1.0\nelement vertex 1\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n0 0 0\n"
    )
    path = tmp_path / "nocolor.ply"
    path.write_text(text)
    with pytest.raises(PlyError, match="missing attribute"):
        load_ply(path)


def test_zero_vertices_errors(tmp_path):
    text = (
        "ply\nformat ascii 1.0\nelement vertex 0\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    path = tmp_path / "zero.ply"
    path.write_text(text)
    with pytest.raises(PlyError):
        load_ply(path)


def test_truncated_body_errors(tmp_path, rng):
    cloud = grid_cloud(rng, n=40)
    path = tmp_path / "t.ply"
    save_ply(cloud, path, mode="binary_le")
    data = path.read_bytes()
    path.write_bytes(data[:-7])
    with pytest.raises(PlyError, match="truncated"):
        load_ply(path)


def test_wrong_property_type_errors(tmp_path):
    text = (
        "ply\nformat ascii 1.0\nelement vertex 1\n"
        "property int x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n0 0 0 1 2 3\n"
    )
    path = tmp_path / "badtype.ply"
    path.write_text(text)
    with pytest.raises(PlyError, match="float or double"):
        load_ply(path)


def test_not_a_ply_errors(tmp_path):
    path = tmp_path / "x.ply"
    path.write_bytes(b"obj\n")
    with pytest.raises(PlyError, match="magic"):
        load_ply(path)


# ---------------------------------------------------------------------------
# Bounding box
# ---------------------------------------------------------------------------


def test_unit_cube_diagonal():
    cloud = PointCloud([[0, 0, 0], [1, 1, 1]], [[0, 0, 0], [1, 1, 1]])
    box = bounding_box(cloud)
    assert box.diagonal == pytest.approx(np.sqrt(3.0))
    assert box.max_side == 1.0


def test_single_point_box_degenerate():
    cloud = PointCloud([[2.0, 3.0, 4.0]], [[0, 0, 0]])
    box = bounding_box(cloud)
    assert box.diagonal == 0.0
    assert box.max_side == 0.0


def test_box_matches_linear_scan(rng):
    cloud = random_cloud(rng, n=100)
    box = bounding_box(cloud)
    lo = np.array([min(cloud.positions[:, a]) for a in range(3)])
    hi = np.array([max(cloud.positions[:, a]) for a in range(3)])
    np.testing.assert_array_equal(box.min_corner, lo)
    np.testing.assert_array_equal(box.max_corner, hi)


# ---------------------------------------------------------------------------
# Spatial index
# ---------------------------------------------------------------------------


def test_knn_self_query(rng):
    cloud = random_cloud(rng, n=50)
    index = SpatialIndex.from_cloud(cloud)
    ids, dists = index.k_nearest(cloud.positions[17], 1)
    assert ids[0] == 17
    assert dists[0] == 0.0


def test_knn_k_equals_n(rng):
    cloud = random_cloud(rng, n=30)
    index = SpatialIndex.from_cloud(cloud)
    ids, dists = index.k_nearest(np.zeros(3), len(cloud))
    assert sorted(ids) == list(range(len(cloud)))
    assert np.all(np.diff(dists) >= 0)


def test_knn_out_of_range_k(rng):
    index = SpatialIndex.from_cloud(random_cloud(rng, n=10))
    with pytest.raises(ValueError):
        index.k_nearest(np.zeros(3), 0)
    with pytest.raises(ValueError):
        index.k_nearest(np.zeros(3), 11)


def _brute_knn(positions, query, k):
    d = np.linalg.norm(positions - query, axis=1)
    order = np.lexsort((np.arange(len(positions)), d))
    return order[:k]


def test_knn_matches_exhaustive_search(rng):
    cloud = random_cloud(rng, n=200)
    index = SpatialIndex.from_cloud(cloud)
    for _ in range(50):
        q = rng.uniform(-5, 55, 3)
        ids, _ = index.k_nearest(q, 5)
        np.testing.assert_array_equal(ids, _brute_knn(cloud.positions, q, 5))


def test_knn_tie_break_by_id_on_grid():
    # symmetric grid: many exact ties; the lower id must win
    pts = np.array([[x, y, z] for x in range(3) for y in range(3) for z in range(3)],
                   dtype=float)
    cloud = PointCloud(pts, np.zeros_like(pts))
    index = SpatialIndex.from_cloud(cloud)
    ids, dists = index.k_nearest(np.array([1.0, 1.0, 1.0]), 7)
    assert ids[0] == 13  # the center itself
    # six face neighbors tie at distance 1; ids ascending
    assert list(dists[1:]) == [1.0] * 6
    assert list(ids[1:]) == sorted(ids[1:])
    nearest_id, _ = index.nearest(np.array([[1.0, 1.0, 1.0]]))
    assert nearest_id[0] == 13


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 60), st.integers(0, 10_000))
def test_knn_property_vs_exhaustive(n, seed):
    r = np.random.default_rng(seed)
    pts = np.floor(r.uniform(0, 8, (n, 3)) * 2) / 2  # coarse grid forces ties
    cloud = PointCloud(pts, np.zeros((n, 3)))
    index = SpatialIndex.from_cloud(cloud)
    k = int(r.integers(1, n + 1))
    q = r.uniform(0, 8, 3)
    ids, _ = index.k_nearest(q, k)
    np.testing.assert_array_equal(ids, _brute_knn(pts, q, k))


def test_k_nearest_wrapper(rng):
    cloud = random_cloud(rng, n=20)
    index = SpatialIndex.from_cloud(cloud)
    assert list(k_nearest(index, cloud.positions[3], 1)) == [3]


# ---------------------------------------------------------------------------
# Normal estimation
# ---------------------------------------------------------------------------


def test_normals_planar_grid():
    xs, ys = np.meshgrid(np.arange(10.0), np.arange(10.0))
    pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(100)], axis=1)
    cloud = PointCloud(pts, np.zeros((100, 3)))
    with_normals, degenerate = estimate_normals(cloud, k=8)
    assert not degenerate.any()
    dots = np.abs(with_normals.normals @ np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(dots, 1.0, atol=1e-6)


def test_normals_sphere_point_outward():
    # Fibonacci sphere: uniform sampling, analytic normals = radial directions
    n = 400
    i = np.arange(n)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(1.0 - z * z)
    v = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    cloud = PointCloud(v * 10.0, np.zeros((n, 3)))
    with_normals, degenerate = estimate_normals(cloud, k=8)
    assert not degenerate.any()
    dots = np.einsum("ni,ni->n", with_normals.normals, v)
    assert np.all(dots > 0.9)


def test_normals_coincident_points_flagged():
    pts = np.zeros((3, 3))
    cloud = PointCloud(pts, np.zeros((3, 3)))
    with_normals, degenerate = estimate_normals(cloud, k=3)
    assert degenerate.all()
    np.testing.assert_array_equal(with_normals.normals, [[0, 0, 1]] * 3)


def test_normals_collinear_points_flagged():
    pts = np.stack([np.arange(6.0), np.zeros(6), np.zeros(6)], axis=1)
    cloud = PointCloud(pts, np.zeros((6, 3)))
    _, degenerate = estimate_normals(cloud, k=4)
    assert degenerate.all()


def test_normals_k_out_of_range(rng):
    cloud = random_cloud(rng, n=10)
    with pytest.raises(ValueError):
        estimate_normals(cloud, k=11)
    with pytest.raises(ValueError):
        estimate_normals(cloud, k=2)
