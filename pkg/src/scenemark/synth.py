"""Self-contained synthetic indoor scenes for hermetic pipeline testing.

A scene is a rectangular room (floor + four walls, sampled as points) with K
axis-aligned colored boxes on the floor, sampled on their faces the way a
scan sees surfaces, and a loop of inward-looking cameras. Everything is a
pure function of (spec, seed): writing the same scene twice produces
byte-identical files. Ground-truth question/answer sets fall directly out of
the construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import look_at_pose
from .render import render_frame_points
from .scene import (AABB, CameraIntrinsics, Frame, Instance, PointCloud,
                    SceneBundle, compute_instance_aabb, save_scene)

PALETTE = (
    ("red", (220, 50, 47)),
    ("green", (64, 160, 70)),
    ("blue", (38, 95, 210)),
    ("yellow", (222, 196, 36)),
    ("magenta", (205, 60, 165)),
    ("cyan", (42, 161, 172)),
    ("orange", (230, 126, 34)),
    ("purple", (125, 70, 180)),
    ("brown", (130, 90, 44)),
    ("pink", (235, 140, 170)),
)

FLOOR_COLOR = (150, 150, 150)
WALL_COLOR = (185, 185, 185)


class SynthPlacementError(RuntimeError):
    """Objects could not be placed disjointly within the room extents."""


@dataclass(frozen=True)
class SynthSpec:
    room_x: float = 6.0
    room_y: float = 5.0
    wall_height: float = 2.6
    object_count: int = 3
    points_per_object: int = 500
    floor_points: int = 4000
    wall_points: int = 3000
    n_frames: int = 12
    object_min_size: float = 0.3
    object_max_size: float = 0.8
    image_width: int = 320
    image_height: int = 240
    focal: float = 280.0
    camera_height: float = 1.6
    max_place_attempts: int = 200


@dataclass(frozen=True)
class SyntheticTruth:
    """Question/answer material implied by the generated scene."""

    qa: tuple[tuple[str, str], ...]
    grounding: tuple[tuple[str, int], ...]      # (question, gt object id)
    captions: tuple[tuple[int, str], ...]       # (object id, reference caption)
    color_by_id: dict[int, str] = field(default_factory=dict)


@dataclass(frozen=True)
class SynthScene:
    bundle: SceneBundle
    frame_images: dict[int, np.ndarray]
    truth: SyntheticTruth

    def write(self, directory) -> Path:
        """Write the bundle layout plus ground-truth and benchmark files.

        Benchmarks reference the scene by the directory name, which is the id
        load_scene will assign on re-read.
        """
        root = Path(directory)
        save_scene(self.bundle, root, frame_images=self.frame_images)
        (root / "truth.json").write_text(json.dumps(_truth_payload(self.truth)))
        for name, payload in synth_benchmarks(root.name, self.truth).items():
            (root / name).write_text(json.dumps(payload, ensure_ascii=False))
        return root


def _truth_payload(truth: SyntheticTruth) -> dict:
    return {
        "qa": [list(item) for item in truth.qa],
        "grounding": [list(item) for item in truth.grounding],
        "captions": [list(item) for item in truth.captions],
        "color_by_id": {str(k): v for k, v in truth.color_by_id.items()},
    }


def synth_benchmarks(scene_id: str, truth: SyntheticTruth) -> dict[str, dict]:
    """Benchmark files (qa / grounding / caption) derived from the truth."""
    qa = {
        "benchmark_id": "scanqa",
        "task": "qa",
        "scene_id": scene_id,
        "questions": [
            {"id": f"qa-{i + 1}", "question": q, "references": [a]}
            for i, (q, a) in enumerate(truth.qa)
        ],
    }
    grounding = {
        "benchmark_id": "scanrefer",
        "task": "visual_grounding",
        "scene_id": scene_id,
        "questions": [
            {
                "id": f"vg-{i + 1}",
                "question": q,
                "references": [str(oid)],
                "gt_object_ids": [oid],
            }
            for i, (q, oid) in enumerate(truth.grounding)
        ],
    }
    caption = {
        "benchmark_id": "scan2cap",
        "task": "dense_caption",
        "scene_id": scene_id,
        "questions": [
            {
                "id": f"cap-{i + 1}",
                "question": f"Describe the object represented by marker {oid}.",
                "references": [text],
                "gt_object_ids": [oid],
            }
            for i, (oid, text) in enumerate(truth.captions)
        ],
    }
    return {
        "benchmark_qa.json": qa,
        "benchmark_grounding.json": grounding,
        "benchmark_caption.json": caption,
    }


def sample_box_surface(lo, hi, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points on the six faces of an axis-aligned box, area-weighted."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    size = hi - lo
    areas = np.array([
        size[1] * size[2], size[1] * size[2],   # x faces
        size[0] * size[2], size[0] * size[2],   # y faces
        size[0] * size[1], size[0] * size[1],   # z faces
    ])
    weights = areas / areas.sum()
    face_of = rng.choice(6, size=count, p=weights)
    u = rng.uniform(size=count)
    v = rng.uniform(size=count)
    pts = np.empty((count, 3))
    for face in range(6):
        mask = face_of == face
        axis = face // 2
        at_max = face % 2 == 1
        others = [a for a in range(3) if a != axis]
        pts[mask, axis] = hi[axis] if at_max else lo[axis]
        pts[mask, others[0]] = lo[others[0]] + u[mask] * size[others[0]]
        pts[mask, others[1]] = lo[others[1]] + v[mask] * size[others[1]]
    return pts


def _place_boxes(spec: SynthSpec, rng: np.random.Generator):
    margin = 0.25
    gap = 0.06
    boxes: list[tuple[np.ndarray, np.ndarray]] = []
    for k in range(spec.object_count):
        placed = False
        for _ in range(spec.max_place_attempts):
            size = rng.uniform(spec.object_min_size, spec.object_max_size, size=3)
            x_lo, x_hi = margin + size[0] / 2, spec.room_x - margin - size[0] / 2
            y_lo, y_hi = margin + size[1] / 2, spec.room_y - margin - size[1] / 2
            if x_hi < x_lo or y_hi < y_lo:
                continue  # object too large for the room; burn an attempt
            cx = rng.uniform(x_lo, x_hi)
            cy = rng.uniform(y_lo, y_hi)
            lo = np.array([cx - size[0] / 2, cy - size[1] / 2, 0.0])
            hi = np.array([cx + size[0] / 2, cy + size[1] / 2, size[2]])
            clear = all(
                np.any(lo - gap >= other_hi) or np.any(hi + gap <= other_lo)
                for other_lo, other_hi in boxes
            )
            if clear:
                boxes.append((lo, hi))
                placed = True
                break
        if not placed:
            raise SynthPlacementError(
                f"could not place object {k + 1} of {spec.object_count} after "
                f"{spec.max_place_attempts} attempts"
            )
    return boxes


def synth_scene(spec: SynthSpec, seed: int) -> SynthScene:
    """Generate a deterministic synthetic scene for the given spec and seed."""
    rng = np.random.default_rng(seed)
    boxes = _place_boxes(spec, rng)

    chunks = []
    colors = []

    floor = np.column_stack([
        rng.uniform(0, spec.room_x, spec.floor_points),
        rng.uniform(0, spec.room_y, spec.floor_points),
        np.zeros(spec.floor_points),
    ])
    chunks.append(floor)
    colors.append(np.tile(FLOOR_COLOR, (spec.floor_points, 1)))

    per_wall = spec.wall_points // 4
    for wall in range(4):
        n = per_wall if wall < 3 else spec.wall_points - 3 * per_wall
        along = rng.uniform(0, spec.room_x if wall < 2 else spec.room_y, n)
        height = rng.uniform(0, spec.wall_height, n)
        pts = np.empty((n, 3))
        if wall == 0:
            pts[:, 0], pts[:, 1] = along, 0.0
        elif wall == 1:
            pts[:, 0], pts[:, 1] = along, spec.room_y
        elif wall == 2:
            pts[:, 0], pts[:, 1] = 0.0, along
        else:
            pts[:, 0], pts[:, 1] = spec.room_x, along
        pts[:, 2] = height
        chunks.append(pts)
        colors.append(np.tile(WALL_COLOR, (n, 1)))

    instances = []
    offset = sum(len(c) for c in chunks)
    color_by_id: dict[int, str] = {}
    for k, (lo, hi) in enumerate(boxes):
        name, rgb = PALETTE[k % len(PALETTE)]
        pts = sample_box_surface(lo, hi, spec.points_per_object, rng)
        chunks.append(pts)
        colors.append(np.tile(rgb, (spec.points_per_object, 1)))
        indices = np.arange(offset, offset + spec.points_per_object)
        offset += spec.points_per_object
        instances.append((k + 1, indices, name))
        color_by_id[k + 1] = name

    cloud = PointCloud(np.vstack(chunks), np.vstack(colors).astype(np.uint8))
    instance_objs = tuple(
        Instance(
            id=oid,
            point_indices=idx,
            aabb=compute_instance_aabb(cloud, idx),
            label=f"{name} box",
        )
        for oid, idx, name in instances
    )

    intrinsics = CameraIntrinsics(
        fx=spec.focal, fy=spec.focal,
        cx=spec.image_width / 2.0, cy=spec.image_height / 2.0,
        width=spec.image_width, height=spec.image_height,
    )
    center = np.array([spec.room_x / 2, spec.room_y / 2, 0.8])
    frames = []
    frame_images: dict[int, np.ndarray] = {}
    for i in range(spec.n_frames):
        angle = 2 * np.pi * i / spec.n_frames
        eye = center + np.array([
            0.38 * spec.room_x * np.cos(angle),
            0.38 * spec.room_y * np.sin(angle),
            spec.camera_height - 0.8,
        ])
        pose = look_at_pose(eye, center)
        color, _ = render_frame_points(cloud, pose, intrinsics, splat_radius=2)
        index = i + 1
        frames.append(Frame(index, Path(f"frames/{index}.png"), pose))
        frame_images[index] = color

    bundle = SceneBundle(
        scene_id=f"synth-{seed}",
        cloud=cloud,
        intrinsics=intrinsics,
        frames=tuple(frames),
        instances=instance_objs,
    )
    truth = _derive_truth(instance_objs, color_by_id)
    return SynthScene(bundle, frame_images, truth)


def _derive_truth(instances, color_by_id: dict[int, str]) -> SyntheticTruth:
    qa = [("how many marked objects are in the room?", str(len(instances)))]
    captions = []
    for inst in instances:
        color = color_by_id[inst.id]
        qa.append((f"what color is the object marked {inst.id}?", color))
        captions.append((inst.id, f"a {color} box"))
    color_counts: dict[str, int] = {}
    for color in color_by_id.values():
        color_counts[color] = color_counts.get(color, 0) + 1
    grounding = [
        (f"What is the ID of the {color_by_id[inst.id]} box?", inst.id)
        for inst in instances
        if color_counts[color_by_id[inst.id]] == 1
    ]
    return SyntheticTruth(
        qa=tuple(qa),
        grounding=tuple(grounding),
        captions=tuple(captions),
        color_by_id=dict(color_by_id),
    )


def load_benchmark(path) -> dict:
    """Read a benchmark file written by SynthScene.write (or hand-authored)."""
    payload = json.loads(Path(path).read_text())
    for key in ("benchmark_id", "task", "questions"):
        if key not in payload:
            raise ValueError(f"benchmark file {path} lacks {key!r}")
    return payload


def frame_image(bundle: SceneBundle, index: int) -> Image.Image:
    """Open the raster for a frame index from the bundle's directory."""
    for frame in bundle.frames:
        if frame.index == index:
            return Image.open(frame.image_path).convert("RGB")
    raise KeyError(f"no frame with index {index}")
