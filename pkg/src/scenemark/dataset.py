"""Instruction-tuning corpus builder: (annotated frames, BEV, text) triples.

Each scene is rendered once; all of that scene's annotations share the same
n + 1 image files (n marker-annotated frames plus the annotated BEV).
Annotations become single-turn conversations whose user side is produced by
the template diversifier, so a fixed config regenerates the corpus
byte-for-byte.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

from .pipeline import AnnotateOptions, annotate_scene, config_hash, _options_payload
from .prompts import TemplateLibrary, default_templates, diversify_template
from .scene import SceneBundle

logger = logging.getLogger(__name__)

SOURCES = ("scanqa", "sqa3d", "scan2cap", "multi3dref", "scanrefer")

_SOURCE_TASK = {
    "scanqa": "qa",
    "sqa3d": "qa",
    "scan2cap": "dense_caption",
    "multi3dref": "visual_grounding",
    "scanrefer": "visual_grounding",
}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationSource:
    """One benchmark's worth of annotations to convert into training records."""

    source: str
    records: tuple

    def __post_init__(self):
        if self.source not in SOURCES:
            raise DatasetError(f"unknown source {self.source!r}; expected one of {SOURCES}")

    @property
    def task(self) -> str:
        return _SOURCE_TASK[self.source]


@dataclass(frozen=True)
class TrainingRecord:
    id: str
    scene: str
    source: str
    images: tuple[str, ...]
    conversations: tuple[dict, ...]

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "scene": self.scene,
            "source": self.source,
            "images": list(self.images),
            "conversations": [dict(turn) for turn in self.conversations],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "TrainingRecord":
        return cls(
            id=data["id"],
            scene=data["scene"],
            source=data["source"],
            images=tuple(data["images"]),
            conversations=tuple(data["conversations"]),
        )


@dataclass(frozen=True)
class DatasetConfig:
    frames: int = 8
    preset: str = "base"
    template_seed: int = 0
    skip_missing_scenes: bool = False
    annotate: AnnotateOptions = field(default_factory=AnnotateOptions)

    def effective_annotate(self) -> AnnotateOptions:
        import dataclasses

        return dataclasses.replace(self.annotate, preset=self.preset, frames=self.frames)


def _target_for(task: str, payload: dict) -> str:
    if task == "qa":
        return str(payload["answer"])
    if task == "dense_caption":
        return str(payload["caption"])
    return str(payload["object_id"])


def _annotation_payload(task: str, payload: dict) -> dict:
    if task == "qa":
        return {"task": task, "question": payload["question"]}
    if task == "dense_caption":
        return {"task": task, "object_id": payload["object_id"]}
    return {"task": task, "description": payload["description"]}


def build_dataset(bundles: dict[str, SceneBundle], sources, out_dir,
                  config: DatasetConfig = DatasetConfig(),
                  library: TemplateLibrary | None = None):
    """Render scene images once each and emit training records + manifest.

    Returns (records, manifest). Annotations whose scene id has no bundle
    either raise (default) or are skipped with a warning counter.
    """
    out_root = Path(out_dir)
    images_root = out_root / "images"
    library = library or default_templates()
    options = config.effective_annotate()

    rendered: dict[str, list[str]] = {}
    records: list[TrainingRecord] = []
    per_source: dict[str, int] = {}
    skipped = 0

    for source in sources:
        task = source.task
        for index, payload in enumerate(source.records):
            scene_id = payload["scene_id"]
            if scene_id not in bundles:
                if config.skip_missing_scenes:
                    skipped += 1
                    logger.warning("skipping %s[%d]: unknown scene %s",
                                   source.source, index, scene_id)
                    continue
                raise DatasetError(f"no bundle for scene {scene_id!r}")
            if scene_id not in rendered:
                result = annotate_scene(bundles[scene_id], images_root / scene_id, options)
                rendered[scene_id] = [
                    str(p.relative_to(out_root)) for p in result.frame_paths
                ] + [str(result.bev_path.relative_to(out_root))]
            images = rendered[scene_id]

            rng = random.Random(f"{config.template_seed}:{source.source}:{index}")
            question_text = diversify_template(
                _annotation_payload(task, payload), rng, library
            )
            placeholders = "".join("<image>\n" for _ in images)
            record = TrainingRecord(
                id=f"{source.source}-{index:06d}",
                scene=scene_id,
                source=source.source,
                images=tuple(images),
                conversations=(
                    {"role": "user", "content": placeholders + question_text},
                    {"role": "assistant", "content": _target_for(task, payload)},
                ),
            )
            records.append(record)
            per_source[source.source] = per_source.get(source.source, 0) + 1

    payload = {
        "frames": config.frames,
        "preset": config.preset,
        "template_seed": config.template_seed,
        "annotate": _options_payload(options),
    }
    manifest = {
        "per_source": per_source,
        "total": sum(per_source.values()),
        "skipped": skipped,
        "config": payload,
        "config_hash": config_hash(payload),
    }
    return records, manifest


def dry_run_manifest(counts: dict[str, int], config: DatasetConfig = DatasetConfig()) -> dict:
    """Manifest arithmetic without rendering anything: per-source counts in,
    totals out."""
    for source in counts:
        if source not in SOURCES:
            raise DatasetError(f"unknown source {source!r}; expected one of {SOURCES}")
    payload = {
        "frames": config.frames,
        "preset": config.preset,
        "template_seed": config.template_seed,
    }
    per_source = {source: int(count) for source, count in counts.items()}
    return {
        "per_source": per_source,
        "total": sum(per_source.values()),
        "dry_run": True,
        "config": payload,
        "config_hash": config_hash(payload),
    }


def export_records(records, path) -> None:
    """JSONL, one record per line, stable key order, UTF-8."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json_dict(), ensure_ascii=False) + "\n")


def load_records(path) -> list[TrainingRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(TrainingRecord.from_json_dict(json.loads(line)))
    return records
