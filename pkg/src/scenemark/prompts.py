"""Prompt assembly, answer refinement, and annotation-format diversification.

A prompt bundle pairs a system prompt (what the two input images are) with a
benchmark prompt (guidelines, the regularized answer format, two worked
examples) and the pattern that extracts answers written in that format. The
regularized format is the literal line ``Answer: <content>``; extraction
takes the last such line, case-insensitively.
"""

from __future__ import annotations

import io
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

TASKS = frozenset({"qa", "dense_caption", "visual_grounding"})

# benchmark id -> task it belongs to
BENCHMARK_TASKS = {
    "scanqa": "qa",
    "sqa3d": "qa",
    "scan2cap": "dense_caption",
    "scanrefer": "visual_grounding",
    "multi3dref": "visual_grounding",
}

ANSWER_PATTERN = re.compile(r"^[ \t]*answer[ \t]*:[ \t]*(.+?)[ \t]*$",
                            re.IGNORECASE | re.MULTILINE)

_SYSTEM_PROMPT = (
    "You are looking at an indoor scene through two images. The first image "
    "is a stitched 2D view captured from a video, arranged as a grid with "
    "dimensions of 2 x 4 (eight frames in row-major order). The second image "
    "is a BEV (Bird's Eye View) of the same scene seen from directly above. "
    "Objects carry numeric ID markers; the same ID labels the same object in "
    "every frame and in the BEV image, so you can relate close-up views to "
    "the overall layout."
)

_GUIDELINES = {
    "qa": (
        "Important Guidelines:\n"
        "1. The object IDs drawn on the images are for your reference only; "
        "do not mention them when answering.\n"
        "2. Keep the answer concise, targeting 1-5 words, in the style of "
        "short benchmark answers.\n"
        "3. Answer from what is visible in the frames and the BEV layout."
    ),
    "dense_caption": (
        "Important Guidelines:\n"
        "1. Describe only the object carrying the requested ID marker.\n"
        "2. Mention its category, color or material, and where it sits "
        "relative to nearby objects.\n"
        "3. Use one or two short sentences."
    ),
    "visual_grounding": (
        "Important Guidelines:\n"
        "1. The answer must be exactly one object ID: the numeric marker of "
        "the object that matches the description.\n"
        "2. Use both the frames and the BEV image to check spatial "
        "relations before deciding.\n"
        "3. Reply with the ID only, no extra words."
    ),
}

_EXAMPLES = {
    "qa": (
        ("What color is the sofa in the corner?", "dark gray"),
        ("How many chairs are around the table?", "4"),
    ),
    "dense_caption": (
        ("Describe the object represented by marker 5.",
         "a wooden desk against the wall with a monitor on top"),
        ("Describe the object represented by marker 2.",
         "a tall white wardrobe next to the door"),
    ),
    "visual_grounding": (
        ("What is the ID of the black chair next to the window?", "7"),
        ("Find the round table closest to the door.", "12"),
    ),
}

_ANSWER_FORMAT = (
    "Answer Format:\n"
    "Respond with a single line of the form:\n"
    "Answer: <your answer>"
)


class PromptError(ValueError):
    """Unknown benchmark/task pair or unusable query material."""


@dataclass(frozen=True)
class PromptBundle:
    task: str
    benchmark_id: str
    system_prompt: str
    benchmark_prompt: str
    answer_format_pattern: re.Pattern = ANSWER_PATTERN
    examples: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class ImageAttachment:
    """PNG bytes destined for one image slot of a request."""

    png: bytes


@dataclass(frozen=True)
class VlmRequest:
    """One chat query: system text plus ordered user content parts.

    Parts are plain strings (text) or ImageAttachment (inline image); image
    parts always come in (stitched frames, BEV) order.
    """

    system: str
    parts: tuple
    max_tokens: int = 256
    temperature: float = 0.0


def build_prompt(task: str, benchmark_id: str) -> PromptBundle:
    """The prompt stack for a known (task, benchmark) pair."""
    if task not in TASKS:
        raise PromptError(f"unknown task {task!r}; expected one of {sorted(TASKS)}")
    expected = BENCHMARK_TASKS.get(benchmark_id)
    if expected is None:
        raise PromptError(
            f"unknown benchmark {benchmark_id!r}; known: {sorted(BENCHMARK_TASKS)}"
        )
    if expected != task:
        raise PromptError(
            f"benchmark {benchmark_id!r} belongs to task {expected!r}, not {task!r}"
        )
    examples = _EXAMPLES[task]
    example_text = "Examples:\n" + "\n".join(
        f"Q: {q}\nAnswer: {a}" for q, a in examples
    )
    benchmark_prompt = "\n\n".join(
        [
            f"Benchmark: {benchmark_id}.",
            _GUIDELINES[task],
            _ANSWER_FORMAT,
            example_text,
        ]
    )
    return PromptBundle(
        task=task,
        benchmark_id=benchmark_id,
        system_prompt=_SYSTEM_PROMPT,
        benchmark_prompt=benchmark_prompt,
        examples=examples,
    )


def _as_png_bytes(image) -> bytes:
    if isinstance(image, (bytes, bytearray)):
        return bytes(image)
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def assemble_query(bundle: PromptBundle, stitched, bev, question: str,
                   max_tokens: int = 256, temperature: float = 0.0) -> VlmRequest:
    """Build the request: [stitched image, BEV image, question text].

    Both images are required for every scene task; attachment order is fixed.
    """
    if stitched is None:
        raise PromptError("stitched frame image is required")
    if bev is None:
        raise PromptError("BEV image is required")
    return VlmRequest(
        system=bundle.system_prompt + "\n\n" + bundle.benchmark_prompt,
        parts=(
            ImageAttachment(_as_png_bytes(stitched)),
            ImageAttachment(_as_png_bytes(bev)),
            question,
        ),
        max_tokens=max_tokens,
        temperature=temperature,
    )


_TERMINAL_PUNCT = ".,!?;:"
_SIBILANT_ENDINGS = ("x", "z", "ch", "sh", "ss")


def _singularize(text: str) -> str:
    """Suffix-only plural cleanup of the final word; no lexicon, idempotent."""
    words = text.split(" ")
    word = words[-1]
    if word.endswith("ss"):
        pass
    elif word.endswith("es") and word[:-2].endswith(_SIBILANT_ENDINGS) and len(word) - 2 >= 3:
        word = word[:-2]
    elif word.endswith("s") and len(word) - 1 >= 3:
        word = word[:-1]
    words[-1] = word
    return " ".join(words)


def refine_answer(raw_text: str, task: str):
    """Strip the regularized format and clean up the content.

    QA and captions come back lowercased with terminal punctuation removed
    and whitespace collapsed; QA additionally gets plural cleanup. Grounding
    answers parse to the first integer id, or None when none is present.
    """
    if task not in TASKS:
        raise PromptError(f"unknown task {task!r}")
    matches = ANSWER_PATTERN.findall(raw_text)
    content = matches[-1] if matches else raw_text.strip()

    if task == "visual_grounding":
        found = re.search(r"-?\d+", content)
        return int(found.group()) if found else None

    content = " ".join(content.lower().split())
    content = content.rstrip(_TERMINAL_PUNCT).rstrip()
    if task == "qa" and content:
        content = _singularize(content)
    return content


@dataclass(frozen=True)
class TemplateLibrary:
    """Per-task phrasing templates, loaded from a tab-separated data file."""

    by_task: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path=None) -> "TemplateLibrary":
        if path is None:
            text = (resources.files("scenemark") / "data" / "templates.tsv").read_text(
                encoding="utf-8"
            )
        else:
            text = Path(path).read_text(encoding="utf-8")
        by_task: dict[str, list[str]] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"templates line {lineno}: expected task<TAB>template")
            task, template = line.split("\t", 1)
            if task not in TASKS:
                raise ValueError(f"templates line {lineno}: unknown task {task!r}")
            by_task.setdefault(task, []).append(template)
        for task in TASKS:
            if len(by_task.get(task, [])) < 5:
                raise ValueError(f"need at least 5 templates for task {task!r}")
        return cls(by_task)


_DEFAULT_LIBRARY: TemplateLibrary | None = None


def default_templates() -> TemplateLibrary:
    global _DEFAULT_LIBRARY
    if _DEFAULT_LIBRARY is None:
        _DEFAULT_LIBRARY = TemplateLibrary.load()
    return _DEFAULT_LIBRARY


def diversify_template(annotation: dict, rng: random.Random,
                       library: TemplateLibrary | None = None) -> str:
    """Render an annotation through one of the task's phrasings.

    The choice is a pure function of the rng state; payload fields substitute
    verbatim into {field} placeholders.
    """
    task = annotation.get("task")
    if task not in TASKS:
        raise PromptError(f"annotation task {task!r} unknown")
    templates = (library or default_templates()).by_task[task]
    template = rng.choice(templates)
    payload = {k: v for k, v in annotation.items() if k != "task"}
    try:
        return template.format(**payload)
    except KeyError as exc:
        raise PromptError(f"annotation lacks field {exc} for template {template!r}") from None
