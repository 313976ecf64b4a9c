import numpy as np
import pytest

from scenemark import (BevConfig, CameraIntrinsics, CameraPose, PointCloud,
                       render_bev, render_frame_points, render_frame_zbuffer)
from scenemark.render import _disc_offsets, bev_cell_indices

INTR = CameraIntrinsics(80.0, 80.0, 32.0, 24.0, 64, 48)
IDENTITY = CameraPose(np.eye(4))


def bruteforce_bev(bev, positions, colors, background):
    """Independent per-cell max-z scan using the image's own transform."""
    height, width = bev.pixels.shape[:2]
    raster = np.empty((height, width, 3), dtype=np.uint8)
    raster[:] = background
    a, b, c, d, e, f = bev.world_to_pixel
    best = {}
    for idx, (point, color) in enumerate(zip(positions, colors)):
        if point[2] > bev.z_clip:
            continue
        u = int(np.floor(a * point[0] + b * point[1] + c))
        v = int(np.floor(d * point[0] + e * point[1] + f))
        u = min(max(u, 0), width - 1)
        v = min(max(v, 0), height - 1)
        key = (v, u)
        rank = (point[2], idx)
        if key not in best or rank > best[key][0]:
            best[key] = (rank, color)
    for (v, u), (_, color) in best.items():
        raster[v, u] = color
    return raster


def random_cloud(rng, count):
    positions = np.column_stack([
        rng.uniform(-3, 5, count),
        rng.uniform(-2, 4, count),
        rng.uniform(0, 3, count),
    ])
    colors = rng.integers(0, 256, size=(count, 3), dtype=np.uint8)
    return PointCloud(positions, colors)


def test_single_red_point():
    cloud = PointCloud(np.array([[1.0, 2.0, 0.5]]),
                       np.array([[255, 0, 0]], dtype=np.uint8))
    config = BevConfig(width=64, height=64, margin_px=8, z_clip_percentile=None)
    bev = render_bev(cloud, config)
    red = np.argwhere((bev.pixels == [255, 0, 0]).all(axis=2))
    assert len(red) == 1
    uv = bev.to_pixel([[1.0, 2.0]])[0]
    assert tuple(red[0]) == (int(np.floor(uv[1])), int(np.floor(uv[0])))


def test_keep_max_zbuffer_picks_higher_point():
    cloud = PointCloud(
        np.array([[0.0, 0.0, 0.1], [0.0, 0.0, 2.0], [1.0, 1.0, 0.0]]),
        np.array([[0, 0, 255], [0, 255, 0], [9, 9, 9]], dtype=np.uint8),
    )
    bev = render_bev(cloud, BevConfig(width=32, height=32, margin_px=4,
                                      z_clip_percentile=None))
    u, v = bev_cell_indices(bev, np.array([[0.0, 0.0, 0.0]]))
    np.testing.assert_array_equal(bev.pixels[v[0], u[0]], [0, 255, 0])


def test_bev_matches_bruteforce_scan():
    rng = np.random.default_rng(17)
    for _ in range(8):
        cloud = random_cloud(rng, rng.integers(50, 4000))
        config = BevConfig(width=48, height=40, margin_px=4,
                           z_clip_percentile=float(rng.uniform(70, 100)))
        bev = render_bev(cloud, config)
        expected = bruteforce_bev(bev, cloud.positions, cloud.colors, config.background)
        np.testing.assert_array_equal(bev.pixels, expected)


def test_bev_tie_breaks_toward_larger_index():
    positions = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [2.0, 2.0, 0.0]])
    colors = np.array([[10, 10, 10], [250, 250, 250], [5, 5, 5]], dtype=np.uint8)
    cloud = PointCloud(positions, colors)
    bev = render_bev(cloud, BevConfig(width=16, height=16, margin_px=2,
                                      z_clip_percentile=None))
    u, v = bev_cell_indices(bev, positions[:1])
    np.testing.assert_array_equal(bev.pixels[v[0], u[0]], [250, 250, 250])


def test_world_pixel_roundtrip_within_half_pixel():
    rng = np.random.default_rng(23)
    cloud = random_cloud(rng, 500)
    bev = render_bev(cloud, BevConfig(width=128, height=128, margin_px=8))
    xy = cloud.positions[:50, :2]
    back = bev.to_world(bev.to_pixel(xy))
    assert np.abs(back - xy).max() < bev.meters_per_pixel / 2 + 1e-12


def test_nonbackground_pixels_trace_to_points():
    rng = np.random.default_rng(29)
    cloud = random_cloud(rng, 300)
    config = BevConfig(width=40, height=40, margin_px=4, z_clip_percentile=None,
                       background=(1, 2, 3))
    bev = render_bev(cloud, config)
    u, v = bev_cell_indices(bev, cloud.positions)
    hit_cells = set(zip(v.tolist(), u.tolist()))
    nonbackground = np.argwhere((bev.pixels != [1, 2, 3]).any(axis=2))
    for cell in map(tuple, nonbackground):
        assert cell in hit_cells


def test_bev_meta_sidecar(tmp_path):
    rng = np.random.default_rng(31)
    cloud = random_cloud(rng, 100)
    bev = render_bev(cloud, BevConfig(z_clip_percentile=95.0))
    bev.write_meta(tmp_path / "bev_meta.json")
    import json

    meta = json.loads((tmp_path / "bev_meta.json").read_text())
    assert meta["meters_per_pixel"] == bev.meters_per_pixel
    assert len(meta["world_to_pixel"]) == 6
    assert meta["z_clip"] == pytest.approx(bev.z_clip)


def test_zbuffer_empty_and_single_point():
    cloud = PointCloud(np.array([[0.0, 0.0, 2.0]]),
                       np.array([[7, 7, 7]], dtype=np.uint8))
    zbuf = render_frame_zbuffer(cloud, IDENTITY, INTR, splat_radius=0)
    assert zbuf[24, 32] == 2.0
    assert np.isinf(zbuf[0, 0])
    assert np.isinf(zbuf).sum() == zbuf.size - 1


def bruteforce_zbuffer(cloud, pose, intrinsics, splat_radius):
    from scenemark import project_points

    zbuf = np.full((intrinsics.height, intrinsics.width), np.inf)
    uv, depth, valid = project_points(cloud.positions, pose, intrinsics)
    for v_px in range(intrinsics.height):
        for u_px in range(intrinsics.width):
            for i in range(len(cloud)):
                if not valid[i]:
                    continue
                du = u_px - int(np.floor(uv[i, 0]))
                dv = v_px - int(np.floor(uv[i, 1]))
                if du * du + dv * dv <= splat_radius * splat_radius:
                    zbuf[v_px, u_px] = min(zbuf[v_px, u_px], depth[i])
    return zbuf


def test_zbuffer_matches_bruteforce():
    rng = np.random.default_rng(37)
    intr = CameraIntrinsics(30.0, 30.0, 16.0, 12.0, 32, 24)
    positions = np.column_stack([
        rng.uniform(-1, 1, 120), rng.uniform(-0.8, 0.8, 120), rng.uniform(0.5, 6, 120),
    ])
    cloud = PointCloud(positions, np.zeros((120, 3), dtype=np.uint8))
    for radius in (0, 1, 2):
        fast = render_frame_zbuffer(cloud, IDENTITY, intr, splat_radius=radius)
        slow = bruteforce_zbuffer(cloud, IDENTITY, intr, radius)
        np.testing.assert_array_equal(fast, slow)


def test_frame_points_render_shows_nearest_color():
    positions = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 4.0]])
    colors = np.array([[255, 0, 0], [0, 255, 0]], dtype=np.uint8)
    cloud = PointCloud(positions, colors)
    color, zbuf = render_frame_points(cloud, IDENTITY, INTR, splat_radius=1)
    np.testing.assert_array_equal(color[24, 32], [255, 0, 0])
    assert zbuf[24, 32] == 2.0


def test_disc_offsets_radius_zero_is_center_only():
    np.testing.assert_array_equal(_disc_offsets(0), [[0, 0]])
    assert len(_disc_offsets(2)) == 13


def test_empty_margin_rejected():
    cloud = PointCloud(np.zeros((1, 3)), np.zeros((1, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        render_bev(cloud, BevConfig(width=16, height=16, margin_px=8))
