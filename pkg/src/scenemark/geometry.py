"""Pinhole projection, visibility, marker coordinates, and 3D box IoU.

An object carries two marker coordinates: its per-frame image position (the
centroid of its visible projected points) and its bird's-eye position (the
xy midpoint of its world AABB). The same object id labels both, which is
what makes markers consistent across frames and the top-down view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import AABB, CameraIntrinsics, CameraPose, Instance, PointCloud


@dataclass(frozen=True)
class VisibilityParams:
    """Thresholds for per-frame marker placement.

    theta_vis: minimum visible fraction for a marker to be emitted.
    delta_occ: depth slack (m) when comparing a point against the z-buffer.
    eps_depth: points with camera-frame depth <= eps_depth never project.
    """

    theta_vis: float = 0.15
    delta_occ: float = 0.05
    eps_depth: float = 1e-4


@dataclass(frozen=True)
class Marker2D:
    object_id: int
    pixel: tuple[float, float]
    mean_depth: float
    visible_fraction: float


@dataclass(frozen=True)
class Marker3D:
    object_id: int
    world_xy: tuple[float, float]


def project_point(p_world, pose: CameraPose, intrinsics: CameraIntrinsics,
                  eps_depth: float = 1e-4):
    """Project one world point; None when at or behind the camera plane.

    The returned (u, v) may fall outside the image bounds: callers filter.
    """
    p = np.asarray(p_world, dtype=np.float64)
    w2c = pose.world_to_camera()
    cam = w2c[:3, :3] @ p + w2c[:3, 3]
    z = cam[2]
    if z <= eps_depth:
        return None
    u = intrinsics.fx * cam[0] / z + intrinsics.cx
    v = intrinsics.fy * cam[1] / z + intrinsics.cy
    return float(u), float(v), float(z)


def project_points(points, pose: CameraPose, intrinsics: CameraIntrinsics,
                   eps_depth: float = 1e-4):
    """Vectorized projection of (N,3) points.

    Returns (uv (N,2), depth (N,), valid (N,) bool); uv/depth are NaN/0 where
    invalid.
    """
    pts = np.asarray(points, dtype=np.float64)
    w2c = pose.world_to_camera()
    cam = pts @ w2c[:3, :3].T + w2c[:3, 3]
    z = cam[:, 2]
    valid = z > eps_depth
    uv = np.full((len(pts), 2), np.nan)
    safe_z = np.where(valid, z, 1.0)
    uv[:, 0] = intrinsics.fx * cam[:, 0] / safe_z + intrinsics.cx
    uv[:, 1] = intrinsics.fy * cam[:, 1] / safe_z + intrinsics.cy
    uv[~valid] = np.nan
    depth = np.where(valid, z, 0.0)
    return uv, depth, valid


def back_project(u: float, v: float, depth: float, pose: CameraPose,
                 intrinsics: CameraIntrinsics) -> np.ndarray:
    """Reconstruct the world point seen at (u, v) at the given depth."""
    x = (u - intrinsics.cx) / intrinsics.fx * depth
    y = (v - intrinsics.cy) / intrinsics.fy * depth
    cam = np.array([x, y, depth, 1.0])
    return (pose.matrix @ cam)[:3]


def bev_marker(instance: Instance, cloud: PointCloud) -> Marker3D:
    """Top-down marker position: xy midpoint of the instance AABB."""
    box = instance.aabb
    return Marker3D(
        object_id=instance.id,
        world_xy=(float((box.min[0] + box.max[0]) / 2.0),
                  float((box.min[1] + box.max[1]) / 2.0)),
    )


def frame_marker(instance: Instance, cloud: PointCloud, pose: CameraPose,
                 intrinsics: CameraIntrinsics, zbuffer: np.ndarray,
                 params: VisibilityParams = VisibilityParams()):
    """Per-frame marker for one object, or None when too little is visible.

    A point counts as visible when it projects inside the image and its depth
    is within delta_occ of the z-buffer value at its pixel. The marker pixel
    is the centroid of the visible projections (the 2D footprint centroid).
    """
    pts = cloud.positions[instance.point_indices]
    uv, depth, valid = project_points(pts, pose, intrinsics, params.eps_depth)
    height, width = zbuffer.shape

    with np.errstate(invalid="ignore"):
        inside = valid & (uv[:, 0] >= 0) & (uv[:, 0] < width) & (uv[:, 1] >= 0) & (
            uv[:, 1] < height
        )
    kept = np.zeros(len(pts), dtype=bool)
    if np.any(inside):
        u_px = np.floor(uv[inside, 0]).astype(np.int64)
        v_px = np.floor(uv[inside, 1]).astype(np.int64)
        zb = zbuffer[v_px, u_px]
        kept[inside] = depth[inside] <= zb + params.delta_occ

    visible_fraction = float(kept.sum()) / len(pts)
    if visible_fraction < params.theta_vis or not np.any(kept):
        return None
    centroid = uv[kept].mean(axis=0)
    return Marker2D(
        object_id=instance.id,
        pixel=(float(centroid[0]), float(centroid[1])),
        mean_depth=float(depth[kept].mean()),
        visible_fraction=visible_fraction,
    )


def aabb_iou(a: AABB, b: AABB) -> float:
    """Intersection over union of two axis-aligned boxes.

    Two degenerate (zero-volume) boxes score 1 when identical, else 0.
    """
    inter_min = np.maximum(a.min, b.min)
    inter_max = np.minimum(a.max, b.max)
    if np.any(inter_min > inter_max):
        return 0.0
    inter = float(np.prod(inter_max - inter_min))
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 1.0 if a == b else 0.0
    return inter / union


def segment_hits_box(origin, target, box: AABB, t_eps: float = 1e-9) -> bool:
    """True when the open segment origin->target passes through the box interior.

    Slab test on the parametric segment; grazing the far boundary at the
    target itself does not count as a hit.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(target, dtype=np.float64) - o
    t0, t1 = 0.0, 1.0 - t_eps
    for axis in range(3):
        if abs(d[axis]) < 1e-15:
            if o[axis] < box.min[axis] or o[axis] > box.max[axis]:
                return False
            continue
        ta = (box.min[axis] - o[axis]) / d[axis]
        tb = (box.max[axis] - o[axis]) / d[axis]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 >= t1:
            return False
    return True


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Camera-to-world pose with +z toward target, +x right, +y down."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("eye and target coincide")
    z_cam = forward / norm
    right = np.cross(z_cam, np.asarray(up, dtype=np.float64))
    r_norm = np.linalg.norm(right)
    if r_norm < 1e-9:
        raise ValueError("viewing direction is parallel to the up vector")
    x_cam = right / r_norm
    y_cam = np.cross(z_cam, x_cam)
    matrix = np.eye(4)
    matrix[:3, 0] = x_cam
    matrix[:3, 1] = y_cam
    matrix[:3, 2] = z_cam
    matrix[:3, 3] = eye
    return CameraPose(matrix)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix (quaternion method)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
