"""Rasterization: bird's-eye-view images and per-frame depth/color splats.

The BEV is an orthographic top-down projection onto the world xy plane with
an isotropic auto-fit scale. Image "up" (-v) is world +y. Per cell the color
of the highest-z surviving point wins (ties: the point with the larger
index). A configurable height percentile drops ceiling points first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import project_points
from .scene import CameraIntrinsics, CameraPose, PointCloud


@dataclass(frozen=True)
class BevConfig:
    width: int = 512
    height: int = 512
    margin_px: int = 16
    z_clip_percentile: float | None = 95.0
    background: tuple[int, int, int] = (255, 255, 255)


@dataclass(frozen=True)
class BevImage:
    """Top-down raster plus the affine world-xy -> pixel transform.

    world_to_pixel holds (a, b, c, d, e, f) for u = a*x + b*y + c,
    v = d*x + e*y + f. meters_per_pixel is the isotropic scale and z_clip the
    applied height cutoff (+inf when clipping was disabled).
    """

    pixels: np.ndarray
    world_to_pixel: tuple[float, float, float, float, float, float]
    meters_per_pixel: float
    z_clip: float

    def to_pixel(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        a, b, c, d, e, f = self.world_to_pixel
        u = a * xy[:, 0] + b * xy[:, 1] + c
        v = d * xy[:, 0] + e * xy[:, 1] + f
        return np.stack([u, v], axis=1)

    def to_world(self, uv) -> np.ndarray:
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        a, b, c, d, e, f = self.world_to_pixel
        det = a * e - b * d
        x = (e * (uv[:, 0] - c) - b * (uv[:, 1] - f)) / det
        y = (-d * (uv[:, 0] - c) + a * (uv[:, 1] - f)) / det
        return np.stack([x, y], axis=1)

    def write_meta(self, path) -> None:
        Path(path).write_text(
            json.dumps(
                {
                    "meters_per_pixel": self.meters_per_pixel,
                    "world_to_pixel": list(self.world_to_pixel),
                    "z_clip": self.z_clip if np.isfinite(self.z_clip) else None,
                }
            )
        )


def bev_cell_indices(bev: BevImage, positions: np.ndarray):
    """Integer raster cells for (N,3) or (N,2) world positions, clamped."""
    height, width = bev.pixels.shape[:2]
    uv = bev.to_pixel(np.asarray(positions)[:, :2])
    u = np.clip(np.floor(uv[:, 0]).astype(np.int64), 0, width - 1)
    v = np.clip(np.floor(uv[:, 1]).astype(np.int64), 0, height - 1)
    return u, v


def render_bev(cloud: PointCloud, config: BevConfig = BevConfig()) -> BevImage:
    """Orthographic top-down raster with a keep-max z-buffer."""
    positions = cloud.positions
    colors = cloud.colors

    if config.z_clip_percentile is not None:
        z_clip = float(np.percentile(positions[:, 2], config.z_clip_percentile))
        keep = positions[:, 2] <= z_clip
        positions = positions[keep]
        colors = colors[keep]
    else:
        z_clip = np.inf

    x_min, y_min = positions[:, 0].min(), positions[:, 1].min()
    x_max, y_max = positions[:, 0].max(), positions[:, 1].max()
    usable_w = config.width - 2 * config.margin_px
    usable_h = config.height - 2 * config.margin_px
    if usable_w <= 0 or usable_h <= 0:
        raise ValueError("margin leaves no drawable area")
    extent = max((x_max - x_min) / usable_w, (y_max - y_min) / usable_h)
    meters_per_pixel = extent if extent > 0 else 1.0

    a = 1.0 / meters_per_pixel
    transform = (
        a, 0.0, config.margin_px - x_min * a,
        0.0, -a, config.margin_px + y_max * a,
    )
    raster = np.empty((config.height, config.width, 3), dtype=np.uint8)
    raster[:] = config.background

    bev = BevImage(raster, transform, meters_per_pixel, z_clip)
    u, v = bev_cell_indices(bev, positions)
    # Stable ascending-z sort then scatter: the last write per cell is the
    # highest z, ties resolved toward the larger original index.
    order = np.argsort(positions[:, 2], kind="stable")
    raster[v[order], u[order]] = colors[order]
    return bev


def render_frame_zbuffer(cloud: PointCloud, pose: CameraPose,
                         intrinsics: CameraIntrinsics, splat_radius: int = 2,
                         eps_depth: float = 1e-4) -> np.ndarray:
    """Per-pixel minimum point depth with disc splatting; +inf where empty."""
    zbuf, _ = _splat_depth_color(cloud, pose, intrinsics, splat_radius,
                                 eps_depth, want_color=False)
    return zbuf


def render_frame_points(cloud: PointCloud, pose: CameraPose,
                        intrinsics: CameraIntrinsics, splat_radius: int = 2,
                        eps_depth: float = 1e-4,
                        background: tuple[int, int, int] = (235, 235, 235)):
    """Color + depth splat render of the cloud from a camera pose.

    Used to synthesize frame images for generated scenes; each pixel shows
    the nearest splatting point.
    """
    zbuf, color = _splat_depth_color(cloud, pose, intrinsics, splat_radius,
                                     eps_depth, want_color=True,
                                     background=background)
    return color, zbuf


def _disc_offsets(radius: int) -> np.ndarray:
    offsets = [
        (dx, dy)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if dx * dx + dy * dy <= radius * radius
    ]
    return np.asarray(offsets, dtype=np.int64)


def _splat_depth_color(cloud, pose, intrinsics, splat_radius, eps_depth,
                       want_color, background=(235, 235, 235)):
    width, height = intrinsics.width, intrinsics.height
    zbuf = np.full((height, width), np.inf, dtype=np.float64)
    color = None

    uv, depth, valid = project_points(cloud.positions, pose, intrinsics, eps_depth)
    reach = splat_radius
    with np.errstate(invalid="ignore"):
        near = valid & (uv[:, 0] >= -reach) & (uv[:, 0] < width + reach) & (
            uv[:, 1] >= -reach) & (uv[:, 1] < height + reach)
    if not np.any(near):
        if want_color:
            color = np.empty((height, width, 3), dtype=np.uint8)
            color[:] = background
            return zbuf, color
        return zbuf, None

    u0 = np.floor(uv[near, 0]).astype(np.int64)
    v0 = np.floor(uv[near, 1]).astype(np.int64)
    d = depth[near]
    for dx, dy in _disc_offsets(splat_radius):
        u = u0 + dx
        v = v0 + dy
        ok = (u >= 0) & (u < width) & (v >= 0) & (v < height)
        np.minimum.at(zbuf, (v[ok], u[ok]), d[ok])

    if want_color:
        color = np.empty((height, width, 3), dtype=np.uint8)
        color[:] = background
        cols = cloud.colors[near]
        # Paint points whose depth equals the buffer value at their pixel,
        # far to near so the nearest point ends up on top.
        order = np.argsort(-d, kind="stable")
        for dx, dy in _disc_offsets(splat_radius):
            u = u0[order] + dx
            v = v0[order] + dy
            ok = (u >= 0) & (u < width) & (v >= 0) & (v < height)
            color[v[ok], u[ok]] = cols[order][ok]
        return zbuf, color
    return zbuf, None
