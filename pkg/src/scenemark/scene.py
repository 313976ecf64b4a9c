"""Scene domain types, bundle directory I/O, and validation.

World frame is right-handed, z-up, meters. Camera poses are camera-to-world
rigid transforms with the pinhole convention: camera +z looks forward,
+x right, +y down.

Bundle directory layout::

    cloud.ply            binary little-endian PLY, xyz float + rgb uchar
    intrinsics.txt       fx fy cx cy width height (whitespace separated)
    poses/<i>.txt        4x4 row-major camera-to-world, 16 scalars
    frames/<i>.png       frame raster for index i
    instances.json       [{"id", "label"?, "point_indices"}]
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ply import parse_ply, serialize_ply


class SceneValidationError(ValueError):
    """One or more bundle invariants failed; carries the full report."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(problems))


@dataclass(frozen=True)
class AABB:
    """Axis-aligned box, min <= max componentwise. Degenerate boxes allowed."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", np.asarray(self.min, dtype=np.float64))
        object.__setattr__(self, "max", np.asarray(self.max, dtype=np.float64))
        if self.min.shape != (3,) or self.max.shape != (3,):
            raise ValueError("AABB corners must be 3-vectors")
        if np.any(self.min > self.max):
            raise ValueError(f"AABB min {self.min} exceeds max {self.max}")

    @property
    def center(self) -> np.ndarray:
        return (self.min + self.max) / 2.0

    @property
    def volume(self) -> float:
        return float(np.prod(self.max - self.min))

    def __eq__(self, other):
        if not isinstance(other, AABB):
            return NotImplemented
        return bool(np.array_equal(self.min, other.min) and np.array_equal(self.max, other.max))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive: fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid transform as a 4x4 matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"pose matrix must be 4x4, got {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise ValueError(f"pose bottom row must be (0,0,0,1), got {m[3]}")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ValueError("pose rotation is not orthonormal within 1e-6")
        if np.linalg.det(r) <= 0:
            raise ValueError("pose rotation must have determinant +1")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def world_to_camera(self) -> np.ndarray:
        """Inverse transform, computed from the rigid structure."""
        r = self.rotation
        t = self.translation
        inv = np.eye(4)
        inv[:3, :3] = r.T
        inv[:3, 3] = -r.T @ t
        return inv


@dataclass(frozen=True)
class PointCloud:
    """positions (N,3) float64 meters, colors (N,3) uint8."""

    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        col = np.ascontiguousarray(self.colors, dtype=np.uint8)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N,3), got {pos.shape}")
        if col.shape != pos.shape:
            raise ValueError(f"colors shape {col.shape} != positions shape {pos.shape}")
        if pos.shape[0] == 0:
            raise ValueError("point cloud is empty")
        if not np.all(np.isfinite(pos)):
            raise ValueError("point cloud contains non-finite positions")
        pos.flags.writeable = False
        col.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return bool(
            np.array_equal(self.positions, other.positions)
            and np.array_equal(self.colors, other.colors)
        )


@dataclass(frozen=True)
class Instance:
    """Object instance as indices into the scene cloud, plus its exact AABB."""

    id: int
    point_indices: np.ndarray
    aabb: AABB
    label: str | None = None

    def __post_init__(self):
        idx = np.ascontiguousarray(self.point_indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError(f"instance {self.id}: point_indices must be non-empty 1-D")
        if self.id <= 0:
            raise ValueError(f"instance ids must be positive, got {self.id}")
        idx.flags.writeable = False
        object.__setattr__(self, "point_indices", idx)


@dataclass(frozen=True)
class Frame:
    index: int
    image_path: Path
    pose: CameraPose


@dataclass(frozen=True)
class SceneBundle:
    scene_id: str
    cloud: PointCloud
    intrinsics: CameraIntrinsics
    frames: tuple[Frame, ...]
    instances: tuple[Instance, ...] = field(default_factory=tuple)

    def instance_by_id(self, object_id: int) -> Instance:
        for inst in self.instances:
            if inst.id == object_id:
                return inst
        raise KeyError(f"no instance with id {object_id}")


def compute_instance_aabb(cloud: PointCloud, point_indices) -> AABB:
    """Componentwise min/max over the referenced points."""
    idx = np.asarray(point_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cannot compute AABB of an empty index list")
    if idx.min() < 0 or idx.max() >= len(cloud):
        raise IndexError(
            f"point index out of range: [{idx.min()}, {idx.max()}] vs cloud size {len(cloud)}"
        )
    pts = cloud.positions[idx]
    return AABB(pts.min(axis=0), pts.max(axis=0))


def validate_bundle(bundle: SceneBundle) -> list[str]:
    """Collect every invariant violation; empty list means valid."""
    problems: list[str] = []
    if len(bundle.frames) < 1:
        problems.append("bundle has no frames")
    prev = 0
    for i, frame in enumerate(bundle.frames):
        expected = i + 1
        if frame.index != expected:
            problems.append(
                f"frame indices must be 1..N without gaps: position {i} has index {frame.index}"
            )
            break
        prev = frame.index
    del prev
    seen_ids: set[int] = set()
    for inst in bundle.instances:
        if inst.id in seen_ids:
            problems.append(f"duplicate instance id {inst.id}")
        seen_ids.add(inst.id)
        if inst.point_indices.min(initial=0) < 0 or inst.point_indices.max(initial=-1) >= len(
            bundle.cloud
        ):
            problems.append(
                f"instance {inst.id} references point index outside cloud of size {len(bundle.cloud)}"
            )
            continue
        exact = compute_instance_aabb(bundle.cloud, inst.point_indices)
        if exact != inst.aabb:
            problems.append(f"instance {inst.id} stored AABB does not match its points")
    return problems


def _read_intrinsics(path: Path) -> CameraIntrinsics:
    parts = path.read_text().split()
    if len(parts) != 6:
        raise SceneValidationError([f"{path}: expected 6 values, got {len(parts)}"])
    fx, fy, cx, cy = (float(v) for v in parts[:4])
    width, height = int(parts[4]), int(parts[5])
    return CameraIntrinsics(fx, fy, cx, cy, width, height)


def _read_pose(path: Path) -> CameraPose:
    values = [float(v) for v in path.read_text().split()]
    if len(values) != 16:
        raise SceneValidationError([f"{path}: expected 16 values, got {len(values)}"])
    return CameraPose(np.array(values, dtype=np.float64).reshape(4, 4))


def load_scene(directory) -> SceneBundle:
    """Load and fully validate a bundle directory.

    Validation failures are aggregated into a single SceneValidationError so
    one run reports every problem at once.
    """
    root = Path(directory)
    problems: list[str] = []
    for required in ("cloud.ply", "intrinsics.txt", "instances.json"):
        if not (root / required).exists():
            problems.append(f"missing {required}")
    for required_dir in ("poses", "frames"):
        if not (root / required_dir).is_dir():
            problems.append(f"missing {required_dir}/ directory")
    if problems:
        raise SceneValidationError(problems)

    cloud = parse_ply((root / "cloud.ply").read_bytes())
    intrinsics = _read_intrinsics(root / "intrinsics.txt")

    pose_files = {int(p.stem): p for p in (root / "poses").glob("*.txt")}
    image_files = {int(p.stem): p for p in (root / "frames").glob("*.png")}
    if set(pose_files) != set(image_files):
        missing_poses = sorted(set(image_files) - set(pose_files))
        missing_images = sorted(set(pose_files) - set(image_files))
        if missing_poses:
            problems.append(f"frames without pose files: {missing_poses}")
        if missing_images:
            problems.append(f"poses without frame images: {missing_images}")
        raise SceneValidationError(problems)
    if not pose_files:
        raise SceneValidationError(["bundle has no frames"])

    frames = []
    for index in sorted(pose_files):
        frames.append(Frame(index, image_files[index], _read_pose(pose_files[index])))

    raw_instances = json.loads((root / "instances.json").read_text())
    instances = []
    for entry in raw_instances:
        idx = np.asarray(entry["point_indices"], dtype=np.int64)
        if idx.size == 0:
            problems.append(f"instance {entry['id']} has an empty point list")
            continue
        if idx.min() < 0 or idx.max() >= len(cloud):
            problems.append(
                f"instance {entry['id']} references point index {int(idx.max())} "
                f"outside cloud of size {len(cloud)}"
            )
            continue
        instances.append(
            Instance(
                id=int(entry["id"]),
                point_indices=idx,
                aabb=compute_instance_aabb(cloud, idx),
                label=entry.get("label"),
            )
        )
    if problems:
        raise SceneValidationError(problems)

    bundle = SceneBundle(
        scene_id=root.name,
        cloud=cloud,
        intrinsics=intrinsics,
        frames=tuple(frames),
        instances=tuple(instances),
    )
    problems = validate_bundle(bundle)
    if problems:
        raise SceneValidationError(problems)
    return bundle


def save_scene(bundle: SceneBundle, directory, frame_images=None) -> Path:
    """Write a bundle in the directory layout.

    frame_images maps frame index -> PIL Image (or (H,W,3) uint8 array).
    When omitted, the bundle's frame image paths must already point at files,
    which are copied in.
    """
    from PIL import Image

    root = Path(directory)
    (root / "poses").mkdir(parents=True, exist_ok=True)
    (root / "frames").mkdir(parents=True, exist_ok=True)

    (root / "cloud.ply").write_bytes(serialize_ply(bundle.cloud))
    intr = bundle.intrinsics
    (root / "intrinsics.txt").write_text(
        f"{intr.fx} {intr.fy} {intr.cx} {intr.cy} {intr.width} {intr.height}\n"
    )
    for frame in bundle.frames:
        rows = [" ".join(repr(float(v)) for v in row) for row in frame.pose.matrix]
        (root / "poses" / f"{frame.index}.txt").write_text("\n".join(rows) + "\n")
        target = root / "frames" / f"{frame.index}.png"
        if frame_images is not None and frame.index in frame_images:
            img = frame_images[frame.index]
            if isinstance(img, np.ndarray):
                img = Image.fromarray(img)
            img.save(target)
        elif Path(frame.image_path) != target:
            target.write_bytes(Path(frame.image_path).read_bytes())

    entries = []
    for inst in bundle.instances:
        entry = {"id": inst.id, "point_indices": inst.point_indices.tolist()}
        if inst.label is not None:
            entry["label"] = inst.label
        entries.append(entry)
    (root / "instances.json").write_text(json.dumps(entries, ensure_ascii=False))
    return root
