import random

import numpy as np
import pytest

from scenemark import (AABB, EvalRecord, aabb_iou, bleu, caption_iou_gate,
                       exhaustive_match_count, greedy_match_count, grounding_acc,
                       multi3dref_f1, record_f1)

UNIT = AABB([0, 0, 0], [1, 1, 1])
SHIFT_HALF = AABB([0.5, 0, 0], [1.5, 1, 1])      # IoU 1/3 with UNIT
SHIFT_07 = AABB([0.7, 0, 0], [1.7, 1, 1])        # IoU 0.3/1.7 ~ 0.176
FAR = AABB([8, 8, 8], [9, 9, 9])


def rec(qid, preds, gts, distractor=False):
    return EvalRecord(question_id=qid, task="visual_grounding",
                      pred_boxes=tuple(preds), gt_boxes=tuple(gts),
                      distractor=distractor)


def test_single_target_accuracy_hand_counts():
    records = [
        rec("exact", [UNIT], [UNIT]),            # IoU 1 -> both thresholds
        rec("third", [SHIFT_HALF], [UNIT]),      # IoU 1/3 -> only @0.25
        rec("low", [SHIFT_07], [UNIT]),          # IoU ~0.176 -> neither
        rec("unparseable", [], [UNIT]),          # failure at all thresholds
    ]
    acc = grounding_acc(records, (0.25, 0.5))
    assert acc[0.25] == pytest.approx(2 / 4)
    assert acc[0.5] == pytest.approx(1 / 4)


def test_grounding_acc_requires_gt():
    with pytest.raises(ValueError):
        grounding_acc([rec("broken", [UNIT], [])])
    with pytest.raises(ValueError):
        grounding_acc([])


def test_grounding_acc_monotone_in_threshold():
    rng = np.random.default_rng(0)
    records = []
    for i in range(60):
        shift = rng.uniform(0, 1.2)
        records.append(rec(f"r{i}", [AABB([shift, 0, 0], [shift + 1, 1, 1])], [UNIT]))
    thresholds = (0.1, 0.25, 0.5, 0.75)
    acc = grounding_acc(records, thresholds)
    values = [acc[t] for t in thresholds]
    assert values == sorted(values, reverse=True)


def test_record_f1_hand_case():
    # 2 GT, 3 predictions, exactly one matching pair at the threshold
    record = rec("hand", [UNIT, FAR, AABB([3, 3, 3], [4, 4, 4])],
                 [AABB([0.1, 0, 0], [1.1, 1, 1]), AABB([5, 5, 5], [6, 6, 6])])
    assert record_f1(record, 0.5) == pytest.approx(0.4)  # P=1/3, R=1/2


def test_zero_target_conventions():
    assert record_f1(rec("zt-empty", [], []), 0.5) == 1.0
    assert record_f1(rec("zt-noisy", [UNIT], []), 0.5) == 0.0


def test_perfect_prediction_set():
    record = rec("pair", [UNIT, FAR], [FAR, UNIT])
    assert record_f1(record, 0.5) == 1.0


THE_SUITE = [
    rec("q01", [UNIT], [UNIT]),                          # ST exact
    rec("q02", [SHIFT_HALF], [UNIT]),                    # ST IoU=1/3
    rec("q03", [SHIFT_07], [UNIT], distractor=True),     # ST w/D miss at both
    rec("q04", [], [UNIT], distractor=True),             # ST w/D unparseable
    rec("q05", [], []),                                  # ZT correct silence
    rec("q06", [UNIT], [], ),                            # ZT wrong prediction
    rec("q07", [], [], distractor=True),                 # ZT w/D correct
    rec("q08", [FAR], [], distractor=True),              # ZT w/D wrong
    rec("q09", [UNIT, FAR], [UNIT, FAR]),                # MT perfect
    rec("q10", [UNIT, FAR, AABB([3, 3, 3], [4, 4, 4])],
        [AABB([0.1, 0, 0], [1.1, 1, 1]), AABB([5, 5, 5], [6, 6, 6])]),  # MT F1=0.4@0.5
    rec("q11", [SHIFT_HALF, FAR], [UNIT, FAR]),          # MT: 2 match @0.25, 1 @0.5
    rec("q12", [UNIT], [UNIT], distractor=False),        # ST exact again
]


def test_twelve_record_suite_hand_computed_breakdown():
    by_hand_05 = {
        "ST w/o D": (1.0 + 0.0 + 1.0) / 3,       # q01, q02(IoU 1/3 < 0.5), q12
        "ST w/ D": 0.0,                           # q03, q04
        "ZT w/o D": (1.0 + 0.0) / 2,              # q05, q06
        "ZT w/ D": (1.0 + 0.0) / 2,               # q07, q08
        "MT": (1.0 + 0.4 + 0.5) / 3,              # q09, q10, q11
    }
    got = multi3dref_f1(THE_SUITE, 0.5)
    for subset, value in by_hand_05.items():
        assert got[subset] == pytest.approx(value), subset
    expected_all = (1 + 0 + 0 + 0 + 1 + 0 + 1 + 0 + 1 + 0.4 + 0.5 + 1) / 12
    assert got["ALL"] == pytest.approx(expected_all)

    got_025 = multi3dref_f1(THE_SUITE, 0.25)
    # q02 now matches; q11 now has both pairs
    assert got_025["ST w/o D"] == pytest.approx(1.0)
    assert got_025["MT"] == pytest.approx((1.0 + 0.4 + 1.0) / 3)
    assert got_025["ALL"] >= got["ALL"]


def test_greedy_equals_exhaustive_on_suite():
    for record in THE_SUITE:
        for threshold in (0.25, 0.5):
            greedy = greedy_match_count(record.pred_boxes, record.gt_boxes, threshold)
            optimal = exhaustive_match_count(record.pred_boxes, record.gt_boxes,
                                             threshold)
            assert greedy == optimal, record.question_id


def test_greedy_equals_exhaustive_on_random_small_instances():
    rng = np.random.default_rng(13)
    agree = 0
    total = 0
    for _ in range(300):
        preds = [AABB([s, 0, 0], [s + 1, 1, 1]) for s in rng.uniform(0, 2, rng.integers(0, 4))]
        gts = [AABB([s, 0, 0], [s + 1, 1, 1]) for s in rng.uniform(0, 2, rng.integers(0, 4))]
        for threshold in (0.25, 0.5):
            total += 1
            if greedy_match_count(preds, gts, threshold) == exhaustive_match_count(
                preds, gts, threshold
            ):
                agree += 1
    # greedy is not globally optimal in adversarial cases, but must dominate here
    assert agree / total > 0.97


def test_f1_monotone_in_threshold():
    for t_low, t_high in ((0.1, 0.25), (0.25, 0.5), (0.5, 0.9)):
        low = multi3dref_f1(THE_SUITE, t_low)["ALL"]
        high = multi3dref_f1(THE_SUITE, t_high)["ALL"]
        assert high <= low + 1e-12


def caption_rec(qid, text, refs, preds, gts):
    return EvalRecord(question_id=qid, task="dense_caption", prediction=text,
                      references=tuple(refs), pred_boxes=tuple(preds),
                      gt_boxes=tuple(gts))


def test_caption_gate_identity_when_perfect():
    records = [caption_rec("c1", "a red box", ["a red box"], [UNIT], [UNIT])]
    gated = caption_iou_gate(records, 0.5)
    assert gated[0].prediction == "a red box"


def test_caption_gate_zeroes_low_iou():
    records = [caption_rec("c1", "a red box", ["a red box"], [SHIFT_HALF], [UNIT])]
    assert caption_iou_gate(records, 0.5)[0].prediction == ""
    assert caption_iou_gate(records, 0.25)[0].prediction == "a red box"
    no_pred = [caption_rec("c2", "text", ["text"], [], [UNIT])]
    assert caption_iou_gate(no_pred, 0.25)[0].prediction == ""


def test_gating_monotonicity_for_text_metrics():
    rng = np.random.default_rng(21)
    rnd = random.Random(4)
    words = "red blue box chair small large wooden round".split()
    records = []
    for i in range(40):
        text = " ".join(rnd.choice(words) for _ in range(6))
        shift = rng.uniform(0, 1.2)
        records.append(caption_rec(f"c{i}", text, [text],
                                   [AABB([shift, 0, 0], [shift + 1, 1, 1])], [UNIT]))
    for threshold_pair in ((0.25, 0.5),):
        lo, hi = threshold_pair
        bleu_lo = sum(bleu(r.prediction, list(r.references), 4)
                      for r in caption_iou_gate(records, lo))
        bleu_hi = sum(bleu(r.prediction, list(r.references), 4)
                      for r in caption_iou_gate(records, hi))
        assert bleu_hi <= bleu_lo + 1e-12


def test_iou_one_third_pair_is_the_geometry_example():
    assert aabb_iou(UNIT, SHIFT_HALF) == pytest.approx(1 / 3)
