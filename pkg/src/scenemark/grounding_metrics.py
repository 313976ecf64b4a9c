"""Box-overlap evaluation: grounding accuracy, multi-target F1, caption gating.

Multi-target records are matched one-to-one between predicted and ground
truth boxes greedily by descending IoU (ties toward the lower predicted
index), counting pairs at or above the threshold. Zero-target records score
F1 = 1 exactly when the prediction set is empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .geometry import aabb_iou
from .scene import AABB

SUBSET_KEYS = ("ZT w/o D", "ZT w/ D", "ST w/o D", "ST w/ D", "MT", "ALL")


@dataclass(frozen=True)
class EvalRecord:
    """One scored question: refined prediction, references, optional boxes."""

    question_id: str
    task: str
    prediction: object = None
    references: tuple[str, ...] = ()
    pred_boxes: tuple[AABB, ...] = ()
    gt_boxes: tuple[AABB, ...] = ()
    distractor: bool = False
    scene_id: str | None = None
    extras: dict = field(default_factory=dict, compare=False)


def grounding_acc(records, thresholds=(0.25, 0.5)) -> dict[float, float]:
    """Fraction of records whose best box hits each IoU threshold.

    Records without a predicted box (unparseable answers) count as failures;
    a record without a ground-truth box is a data error.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to evaluate")
    result = {}
    for threshold in thresholds:
        hits = 0
        for record in records:
            if not record.gt_boxes:
                raise ValueError(f"record {record.question_id} has no ground-truth box")
            if not record.pred_boxes:
                continue
            if aabb_iou(record.pred_boxes[0], record.gt_boxes[0]) >= threshold:
                hits += 1
        result[threshold] = hits / len(records)
    return result


def greedy_match_count(pred_boxes, gt_boxes, threshold: float) -> int:
    """Greedy one-to-one matching by descending IoU among pairs >= threshold."""
    pairs = []
    for pi, pbox in enumerate(pred_boxes):
        for gi, gbox in enumerate(gt_boxes):
            iou = aabb_iou(pbox, gbox)
            if iou >= threshold:
                pairs.append((-iou, pi, gi))
    pairs.sort()
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    matches = 0
    for _, pi, gi in pairs:
        if pi in used_pred or gi in used_gt:
            continue
        used_pred.add(pi)
        used_gt.add(gi)
        matches += 1
    return matches


def exhaustive_match_count(pred_boxes, gt_boxes, threshold: float) -> int:
    """Maximum one-to-one matching (brute force; for small instances only)."""
    iou = [
        [aabb_iou(p, g) >= threshold for g in gt_boxes] for p in pred_boxes
    ]

    def best(pi: int, used: int) -> int:
        if pi == len(pred_boxes):
            return 0
        top = best(pi + 1, used)
        for gi in range(len(gt_boxes)):
            if iou[pi][gi] and not used & (1 << gi):
                top = max(top, 1 + best(pi + 1, used | (1 << gi)))
        return top

    return best(0, 0)


def record_f1(record: EvalRecord, threshold: float) -> float:
    """Per-record F1 under greedy matching; zero-target convention applies."""
    if not record.gt_boxes:
        return 1.0 if not record.pred_boxes else 0.0
    if not record.pred_boxes:
        return 0.0
    matches = greedy_match_count(record.pred_boxes, record.gt_boxes, threshold)
    if matches == 0:
        return 0.0
    precision = matches / len(record.pred_boxes)
    recall = matches / len(record.gt_boxes)
    return 2 * precision * recall / (precision + recall)


def _subset_of(record: EvalRecord) -> str:
    targets = len(record.gt_boxes)
    if targets == 0:
        return "ZT w/ D" if record.distractor else "ZT w/o D"
    if targets == 1:
        return "ST w/ D" if record.distractor else "ST w/o D"
    return "MT"


def multi3dref_f1(records, threshold: float) -> dict[str, float]:
    """Mean F1 per subset (zero/single/multi target, with/without distractors).

    Only subsets with at least one record appear; "ALL" always does.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to evaluate")
    sums: dict[str, list[float]] = {}
    all_scores = []
    for record in records:
        score = record_f1(record, threshold)
        sums.setdefault(_subset_of(record), []).append(score)
        all_scores.append(score)
    out = {key: sum(v) / len(v) for key, v in sums.items()}
    out["ALL"] = sum(all_scores) / len(all_scores)
    return out


def caption_iou_gate(records, threshold: float) -> list[EvalRecord]:
    """Blank captions whose predicted box misses the GT box at the threshold.

    Standard gating for caption benchmarks scored jointly with localization:
    the text metrics then see an empty prediction for gated records.
    """
    gated = []
    for record in records:
        if not record.gt_boxes:
            raise ValueError(f"record {record.question_id} has no ground-truth box")
        iou = 0.0
        if record.pred_boxes:
            iou = aabb_iou(record.pred_boxes[0], record.gt_boxes[0])
        if iou < threshold:
            gated.append(replace(record, prediction=""))
        else:
            gated.append(record)
    return gated
