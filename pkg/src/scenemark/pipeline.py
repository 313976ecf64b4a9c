"""End-to-end plumbing: annotate a scene, query an endpoint, score responses.

Every stage writes a manifest carrying the effective options and their hash,
so reruns are auditable and cache hits are attributable to an exact config.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import client as vlm_client
from .draw import (DrawMarker, MarkerStyle, PRESET_FRAME_COUNT, PRESETS,
                   grid_for, overlay_markers, resize_preset, stitch)
from .geometry import VisibilityParams, bev_marker, frame_marker
from .grounding_metrics import (EvalRecord, grounding_acc, multi3dref_f1,
                                caption_iou_gate)
from .prompts import build_prompt, assemble_query, refine_answer
from .render import BevConfig, render_bev, render_frame_zbuffer
from .report import MetricReport, write_audit_jsonl
from .sampling import sample_indices
from .scene import SceneBundle
from . import text_metrics as tm


class PipelineError(RuntimeError):
    pass


class OutputLocked(PipelineError):
    pass


@contextmanager
def output_lock(directory):
    """Single-writer guard: an exclusive .lock file in the output directory."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    lock = root / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputLocked(f"output directory {root} is locked by another run") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield root
    finally:
        lock.unlink(missing_ok=True)


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _options_payload(options) -> dict:
    def clean(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return clean(dataclasses.asdict(value))
        if isinstance(value, dict):
            return {k: clean(v) for k, v in value.items()}
        if isinstance(value, (tuple, list)):
            return [clean(v) for v in value]
        if isinstance(value, (str, int, float, bool)) or value is None:
            return value
        return str(value)

    return clean(options)


@dataclass(frozen=True)
class AnnotateOptions:
    preset: str = "base"
    frames: int | None = None          # None -> the preset's frame count
    style: MarkerStyle = field(default_factory=MarkerStyle)
    bev: BevConfig = field(default_factory=BevConfig)
    visibility: VisibilityParams = field(default_factory=VisibilityParams)
    splat_radius: int = 2

    @property
    def frame_count(self) -> int:
        return self.frames if self.frames is not None else PRESET_FRAME_COUNT[self.preset]


@dataclass(frozen=True)
class AnnotateResult:
    out_dir: Path
    frame_paths: tuple[Path, ...]
    bev_path: Path
    stitched_path: Path
    markers_path: Path
    markers: dict


def _scaled_markers(markers, src_size, dst_size):
    sx = dst_size[0] / src_size[0]
    sy = dst_size[1] / src_size[1]
    return [
        DrawMarker(m.object_id, m.u * sx, m.v * sy, m.weight) for m in markers
    ]


def annotate_scene(bundle: SceneBundle, out_dir,
                   options: AnnotateOptions = AnnotateOptions()) -> AnnotateResult:
    """Render the working frames and BEV with id markers; write sidecars.

    Output directory gains: frames/<i>.png (annotated, preset size), bev.png,
    stitched.png, markers.json, bev_meta.json, manifest.json.
    """
    if options.preset not in PRESETS:
        raise PipelineError(f"unknown preset {options.preset!r}")
    n = options.frame_count
    plan = sample_indices(len(bundle.frames), n)
    preset_size = PRESETS[options.preset]
    native_size = (bundle.intrinsics.width, bundle.intrinsics.height)

    root = Path(out_dir)
    (root / "frames").mkdir(parents=True, exist_ok=True)

    frame_markers_json: dict[str, list] = {}
    annotated_frames: list[Image.Image] = []
    frame_paths: list[Path] = []
    by_index = {frame.index: frame for frame in bundle.frames}

    for index in plan.indices:
        frame = by_index[index]
        zbuf = render_frame_zbuffer(
            bundle.cloud, frame.pose, bundle.intrinsics, options.splat_radius,
            options.visibility.eps_depth,
        )
        native_markers = []
        for inst in bundle.instances:
            marker = frame_marker(inst, bundle.cloud, frame.pose, bundle.intrinsics,
                                  zbuf, options.visibility)
            if marker is not None:
                weight = round(marker.visible_fraction * len(inst.point_indices))
                native_markers.append(
                    DrawMarker(marker.object_id, marker.pixel[0], marker.pixel[1], weight)
                )
                frame_markers_json.setdefault(str(index), []).append({
                    "id": marker.object_id,
                    "u": marker.pixel[0] * preset_size[0] / native_size[0],
                    "v": marker.pixel[1] * preset_size[1] / native_size[1],
                    "depth": marker.mean_depth,
                    "visible_fraction": marker.visible_fraction,
                })
        frame_markers_json.setdefault(str(index), [])

        image = Image.open(frame.image_path).convert("RGB")
        resized = resize_preset(image, options.preset)
        annotated = overlay_markers(
            resized, _scaled_markers(native_markers, native_size, preset_size),
            options.style,
        )
        path = root / "frames" / f"{index}.png"
        annotated.save(path)
        annotated_frames.append(annotated)
        frame_paths.append(path)

    bev = render_bev(bundle.cloud, options.bev)
    bev_native = (options.bev.width, options.bev.height)
    bev_markers_json = []
    bev_draw = []
    for inst in bundle.instances:
        marker = bev_marker(inst, bundle.cloud)
        uv = bev.to_pixel([marker.world_xy])[0]
        bev_draw.append(
            DrawMarker(marker.object_id, uv[0], uv[1], len(inst.point_indices))
        )
        bev_markers_json.append({
            "id": marker.object_id,
            "x": marker.world_xy[0],
            "y": marker.world_xy[1],
            "u": uv[0] * preset_size[0] / bev_native[0],
            "v": uv[1] * preset_size[1] / bev_native[1],
        })
    bev_image = resize_preset(Image.fromarray(bev.pixels), options.preset)
    bev_annotated = overlay_markers(
        bev_image, _scaled_markers(bev_draw, bev_native, preset_size), options.style
    )
    bev_path = root / "bev.png"
    bev_annotated.save(bev_path)
    bev.write_meta(root / "bev_meta.json")

    rows, cols = grid_for(n)
    stitched = stitch(annotated_frames, rows, cols)
    stitched_path = root / "stitched.png"
    stitched.image.save(stitched_path)

    markers = {
        "scene_id": bundle.scene_id,
        "frame_indices": list(plan.indices),
        "image_size": list(preset_size),
        "bev_size": list(preset_size),
        "frame_markers": frame_markers_json,
        "bev_markers": bev_markers_json,
    }
    markers_path = root / "markers.json"
    markers_path.write_text(json.dumps(markers, ensure_ascii=False))

    payload = _options_payload(options)
    manifest = {
        "command": "annotate",
        "scene_id": bundle.scene_id,
        "options": payload,
        "config_hash": config_hash(payload),
        "outputs": [str(p.relative_to(root)) for p in
                    frame_paths + [bev_path, stitched_path, markers_path]],
        "stitch_grid": [rows, cols],
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))

    return AnnotateResult(
        out_dir=root,
        frame_paths=tuple(frame_paths),
        bev_path=bev_path,
        stitched_path=stitched_path,
        markers_path=markers_path,
        markers=markers,
    )


def query_benchmark(benchmark: dict, annotate_dir, endpoint: vlm_client.EndpointConfig,
                    cache_dir=None) -> list[dict]:
    """One exchange per benchmark question against the configured endpoint.

    Endpoint failures are recorded per question without aborting the run.
    With a cache directory, previously seen (model, request) pairs are
    answered locally.
    """
    task = benchmark["task"]
    bundle = build_prompt(task, benchmark["benchmark_id"])
    root = Path(annotate_dir)
    stitched_bytes = (root / "stitched.png").read_bytes()
    bev_bytes = (root / "bev.png").read_bytes()

    cache = vlm_client.ResponseCache(cache_dir) if cache_dir else None
    requests_to_send = []
    slots = []
    exchanges: list[dict | None] = []

    for question in benchmark["questions"]:
        request = assemble_query(bundle, stitched_bytes, bev_bytes, question["question"])
        exchange = {
            "id": question["id"],
            "task": task,
            "benchmark_id": benchmark["benchmark_id"],
            "question": question["question"],
            "raw": None,
            "refined": None,
            "latency_ms": None,
            "attempts": 0,
            "error": None,
        }
        exchanges.append(exchange)
        if cache is not None:
            hit = cache.get(vlm_client.cache_key(request, endpoint))
            if hit is not None:
                _fill_exchange(exchange, hit, task)
                continue
        slots.append((len(exchanges) - 1, request))
        requests_to_send.append(request)

    results = vlm_client.send_batch(requests_to_send, endpoint)
    for (slot, request), result in zip(slots, results):
        exchange = exchanges[slot]
        if isinstance(result, vlm_client.VlmFailure):
            exchange["error"] = result.message
            exchange["attempts"] = result.attempts
            continue
        if cache is not None:
            cache.put(vlm_client.cache_key(request, endpoint), result)
        _fill_exchange(exchange, result, task)
    return exchanges


def _fill_exchange(exchange: dict, response: vlm_client.VlmResponse, task: str) -> None:
    exchange["raw"] = response.text
    exchange["refined"] = refine_answer(response.text, task)
    exchange["latency_ms"] = response.latency_ms
    exchange["attempts"] = response.attempts


def _join(responses: list[dict], benchmark: dict) -> list[tuple[dict, dict]]:
    by_id = {row["id"]: row for row in responses}
    missing = [q["id"] for q in benchmark["questions"] if q["id"] not in by_id]
    extra = sorted(set(by_id) - {q["id"] for q in benchmark["questions"]})
    if missing or extra:
        raise PipelineError(
            f"response/reference id mismatch: missing={missing} extra={extra}"
        )
    return [(by_id[q["id"]], q) for q in benchmark["questions"]]


def evaluate_qa(responses: list[dict], benchmark: dict):
    """Text-metric report over joined responses and references."""
    joined = _join(responses, benchmark)
    corpus = []
    audit = []
    sums = {"EM-1": 0.0, "EM-R1": 0.0, "BLEU-1": 0.0, "BLEU-2": 0.0,
            "BLEU-3": 0.0, "BLEU-4": 0.0, "ROUGE-L": 0.0, "METEOR-lite": 0.0}
    for row, question in joined:
        pred = row["refined"] or ""
        refs = question["references"]
        corpus.append((pred, refs))
        values = {
            "EM-1": tm.em1(pred, refs),
            "EM-R1": tm.em_r1(pred, refs),
            "BLEU-1": tm.bleu(pred, refs, 1),
            "BLEU-2": tm.bleu(pred, refs, 2),
            "BLEU-3": tm.bleu(pred, refs, 3),
            "BLEU-4": tm.bleu(pred, refs, 4),
            "ROUGE-L": tm.rouge_l(pred, refs),
            "METEOR-lite": tm.meteor_lite(pred, refs),
        }
        for key, value in values.items():
            sums[key] += value
        audit.append({"id": row["id"], "prediction": pred, "references": list(refs),
                      **{k: float(v) for k, v in values.items()}})
    count = len(joined)
    metrics = {key: value / count for key, value in sums.items()}
    per_item = tm.cider_per_item(corpus)
    metrics["CIDEr"] = sum(per_item) / count
    for row, value in zip(audit, per_item):
        row["CIDEr"] = value
    return MetricReport(metrics, count), audit


def _boxes_for_ids(bundle: SceneBundle, ids) -> tuple:
    boxes = []
    for object_id in ids:
        try:
            boxes.append(bundle.instance_by_id(int(object_id)).aabb)
        except KeyError:
            continue
    return tuple(boxes)


def grounding_records(responses: list[dict], benchmark: dict,
                      bundles: dict[str, SceneBundle]) -> list[EvalRecord]:
    """EvalRecords with predicted boxes looked up by refined object id."""
    joined = _join(responses, benchmark)
    records = []
    for row, question in joined:
        scene_id = question.get("scene_id", benchmark.get("scene_id"))
        if scene_id not in bundles:
            raise PipelineError(f"no scene bundle for {scene_id!r}")
        bundle = bundles[scene_id]
        gt_ids = question.get("gt_object_ids", [])
        predicted = row["refined"]
        pred_ids = [] if predicted is None else [predicted]
        records.append(
            EvalRecord(
                question_id=row["id"],
                task="visual_grounding",
                prediction=predicted,
                references=tuple(question["references"]),
                pred_boxes=_boxes_for_ids(bundle, pred_ids),
                gt_boxes=_boxes_for_ids(bundle, gt_ids),
                distractor=bool(question.get("distractor", False)),
                scene_id=scene_id,
            )
        )
    return records


def evaluate_grounding(responses: list[dict], benchmark: dict,
                       bundles: dict[str, SceneBundle]):
    records = grounding_records(responses, benchmark, bundles)
    single_target = [r for r in records if len(r.gt_boxes) == 1]
    metrics: dict[str, float] = {}
    if single_target:
        acc = grounding_acc(single_target, (0.25, 0.5))
        metrics["Acc@0.25"] = acc[0.25]
        metrics["Acc@0.5"] = acc[0.5]
    for threshold in (0.25, 0.5):
        breakdown = multi3dref_f1(records, threshold)
        for subset, value in breakdown.items():
            metrics[f"F1@{threshold} {subset}"] = value
    audit = [
        {
            "id": r.question_id,
            "prediction": r.prediction,
            "gt_count": len(r.gt_boxes),
            "pred_count": len(r.pred_boxes),
        }
        for r in records
    ]
    return MetricReport(metrics, len(records)), audit


def caption_records(responses: list[dict], benchmark: dict,
                    bundles: dict[str, SceneBundle]) -> list[EvalRecord]:
    joined = _join(responses, benchmark)
    records = []
    for row, question in joined:
        scene_id = question.get("scene_id", benchmark.get("scene_id"))
        if scene_id not in bundles:
            raise PipelineError(f"no scene bundle for {scene_id!r}")
        bundle = bundles[scene_id]
        gt_ids = question.get("gt_object_ids", [])
        pred_ids = question.get("pred_object_ids", gt_ids)
        records.append(
            EvalRecord(
                question_id=row["id"],
                task="dense_caption",
                prediction=row["refined"] or "",
                references=tuple(question["references"]),
                pred_boxes=_boxes_for_ids(bundle, pred_ids),
                gt_boxes=_boxes_for_ids(bundle, gt_ids),
                scene_id=scene_id,
            )
        )
    return records


def evaluate_caption(responses: list[dict], benchmark: dict,
                     bundles: dict[str, SceneBundle]):
    records = caption_records(responses, benchmark, bundles)
    metrics: dict[str, float] = {}
    audit = []
    for threshold in (0.25, 0.5):
        gated = caption_iou_gate(records, threshold)
        corpus = [(r.prediction, list(r.references)) for r in gated]
        bleu4 = [tm.bleu(p, refs, 4) for p, refs in corpus]
        rouge = [tm.rouge_l(p, refs) for p, refs in corpus]
        meteor = [tm.meteor_lite(p, refs) for p, refs in corpus]
        per_item = tm.cider_per_item(corpus)
        count = len(gated)
        metrics[f"BLEU-4@{threshold}"] = sum(bleu4) / count
        metrics[f"ROUGE-L@{threshold}"] = sum(rouge) / count
        metrics[f"METEOR-lite@{threshold}"] = sum(meteor) / count
        metrics[f"CIDEr@{threshold}"] = sum(per_item) / count
        if threshold == 0.5:
            audit = [
                {"id": r.question_id, "gated_prediction": r.prediction}
                for r in gated
            ]
    return MetricReport(metrics, len(records)), audit


def write_exchanges(path, exchanges: list[dict]) -> None:
    write_audit_jsonl(path, exchanges)
