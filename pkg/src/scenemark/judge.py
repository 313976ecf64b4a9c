"""Pairwise answer comparison through a judge endpoint, plus score aggregation.

Each comparison shows the judge the ground truth and both candidate answers
in a seeded-random A/B order (position-bias hedge); the verdict maps back to
win/tie/lose for the first model. The aggregate score uses football weights
by default (3 per win, 1 per tie, 0 per loss) because those reproduce the
published pairwise totals exactly; a -1 loss weight is selectable.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass

from .client import EndpointConfig, VlmFailure, send_batch
from .prompts import VlmRequest


def gpt_score(win: int, tie: int, lose: int, loss_weight: int = 0) -> int:
    """Aggregate pairwise outcomes: 3*win + tie + loss_weight*lose."""
    if min(win, tie, lose) < 0:
        raise ValueError("counts must be non-negative")
    return 3 * win + tie + loss_weight * lose


@dataclass(frozen=True)
class PairRecord:
    question_id: str
    question: str
    ground_truth: str
    answer_1: str
    answer_2: str


@dataclass(frozen=True)
class JudgeOutcome:
    win: int
    tie: int
    lose: int
    unparseable: int = 0

    @property
    def total(self) -> int:
        return self.win + self.tie + self.lose


_JUDGE_SYSTEM = (
    "You judge which of two candidate answers to a question about an indoor "
    "scene is closer to the ground truth. Reply with exactly one line: "
    "'Verdict: A', 'Verdict: B', or 'Verdict: Tie'."
)

_VERDICT_PATTERN = re.compile(r"verdict\s*[:\-]?\s*(a\b|b\b|tie)", re.IGNORECASE)
_BARE_PATTERN = re.compile(r"^\s*(a|b|tie)\s*[.!]?\s*$", re.IGNORECASE)


def judge_prompt(record: PairRecord, first: str, second: str) -> str:
    return (
        f"Question: {record.question}\n"
        f"Ground truth: {record.ground_truth}\n"
        f"Answer A: {first}\n"
        f"Answer B: {second}\n"
        "Which answer is closer to the ground truth? "
        "Reply 'Verdict: A', 'Verdict: B', or 'Verdict: Tie'."
    )


def parse_verdict(text: str) -> str | None:
    """'a', 'b', or 'tie'; None when the reply fits neither pattern."""
    match = _VERDICT_PATTERN.search(text) or _BARE_PATTERN.match(text)
    if not match:
        return None
    return match.group(1).lower()


def gpt_judge(pair_records, endpoint: EndpointConfig, seed: int = 0,
              max_tokens: int = 16, randomize_order: bool = True) -> JudgeOutcome:
    """Run all comparisons and aggregate verdicts for answer_1's model.

    Unparseable replies (and transport failures) count as ties and are
    reported in the outcome's unparseable counter. randomize_order=False pins
    answer_1 to slot A (useful for scripted-mock tests).
    """
    records = list(pair_records)
    rng = random.Random(seed)
    flipped = [randomize_order and rng.random() < 0.5 for _ in records]

    queries = []
    for record, flip in zip(records, flipped):
        first, second = (
            (record.answer_2, record.answer_1) if flip
            else (record.answer_1, record.answer_2)
        )
        queries.append(
            VlmRequest(
                system=_JUDGE_SYSTEM,
                parts=(judge_prompt(record, first, second),),
                max_tokens=max_tokens,
                temperature=0.0,
            )
        )

    win = tie = lose = unparseable = 0
    for response, flip in zip(send_batch(queries, endpoint), flipped):
        if isinstance(response, VlmFailure):
            tie += 1
            unparseable += 1
            continue
        verdict = parse_verdict(response.text)
        if verdict is None:
            tie += 1
            unparseable += 1
            continue
        if verdict == "tie":
            tie += 1
            continue
        first_wins = verdict == "a"
        model1_wins = first_wins != flip
        if model1_wins:
            win += 1
        else:
            lose += 1
    return JudgeOutcome(win, tie, lose, unparseable)
