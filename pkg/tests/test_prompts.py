import random

import pytest
from PIL import Image

from scenemark import (PromptError, TemplateLibrary, assemble_query, build_prompt,
                       diversify_template, refine_answer)
from scenemark.prompts import ImageAttachment, _singularize


def test_qa_prompt_carries_length_guideline():
    bundle = build_prompt("qa", "scanqa")
    assert "1-5 words" in bundle.benchmark_prompt
    assert "2 x 4" in bundle.system_prompt
    assert "BEV" in bundle.system_prompt


def test_grounding_prompt_asks_for_an_id():
    bundle = build_prompt("visual_grounding", "scanrefer")
    assert "ID" in bundle.benchmark_prompt
    matches = bundle.answer_format_pattern.findall(bundle.benchmark_prompt)
    answers = [a for _, a in bundle.examples]
    for answer in answers:
        assert answer in matches
    assert int(answers[0]) == 7


def test_unknown_benchmark_and_mismatched_task():
    with pytest.raises(PromptError):
        build_prompt("qa", "nonexistent")
    with pytest.raises(PromptError):
        build_prompt("qa", "scanrefer")
    with pytest.raises(PromptError):
        build_prompt("detection", "scanqa")


def test_every_bundle_pattern_extracts_its_own_examples():
    for benchmark, task in [("scanqa", "qa"), ("sqa3d", "qa"),
                            ("scan2cap", "dense_caption"),
                            ("scanrefer", "visual_grounding"),
                            ("multi3dref", "visual_grounding")]:
        bundle = build_prompt(task, benchmark)
        extracted = bundle.answer_format_pattern.findall(bundle.benchmark_prompt)
        for _, answer in bundle.examples:
            assert answer in extracted


def test_assemble_query_orders_attachments():
    bundle = build_prompt("qa", "scanqa")
    stitched = Image.new("RGB", (8, 4), (1, 1, 1))
    bev = Image.new("RGB", (4, 4), (2, 2, 2))
    request = assemble_query(bundle, stitched, bev, "What color is the floor?")
    assert isinstance(request.parts[0], ImageAttachment)
    assert isinstance(request.parts[1], ImageAttachment)
    assert request.parts[2] == "What color is the floor?"
    assert request.parts[0].png.startswith(b"\x89PNG")
    a = Image.open(__import__("io").BytesIO(request.parts[0].png))
    assert a.size == (8, 4)  # slot 0 is the stitched image, slot 1 the BEV
    assert request.system.startswith(bundle.system_prompt)


def test_assemble_query_requires_both_images():
    bundle = build_prompt("visual_grounding", "scanrefer")
    image = Image.new("RGB", (4, 4))
    with pytest.raises(PromptError):
        assemble_query(bundle, image, None, "q")
    with pytest.raises(PromptError):
        assemble_query(bundle, None, image, "q")


def test_question_text_embedded_verbatim():
    bundle = build_prompt("dense_caption", "scan2cap")
    image = Image.new("RGB", (4, 4))
    question = "Describe the object represented by C_5"
    request = assemble_query(bundle, image, image, question)
    assert request.parts[2] == question


def test_refine_answer_qa_formatting():
    assert refine_answer("Answer: Chairs.", "qa") == "chair"
    assert refine_answer("Some preamble.\nAnswer: Brown   Table \n", "qa") == "brown table"
    assert refine_answer("no format marker HERE", "qa") == "no format marker here"
    assert refine_answer("Answer: one\nAnswer: two", "qa") == "two"  # last line wins


def test_refine_answer_grounding():
    assert refine_answer("answer: 17", "visual_grounding") == 17
    assert refine_answer("The id is 9.", "visual_grounding") == 9
    assert refine_answer("no number here", "visual_grounding") is None


def test_refine_answer_caption_keeps_plural():
    assert refine_answer("Answer: two wooden chairs.", "dense_caption") == "two wooden chairs"


def test_refine_is_idempotent():
    samples = [
        "Answer: Chairs.", "Answer: glasses", "Answer: the Boxes!",
        "free text, no marker", "Answer: bus", "Answer: houses",
        "ANSWER:   many   spaces  ", "Answer: cases",
    ]
    for task in ("qa", "dense_caption"):
        for sample in samples:
            once = refine_answer(sample, task)
            assert refine_answer(once, task) == once


def test_singularize_suffix_rules():
    assert _singularize("chairs") == "chair"
    assert _singularize("boxes") == "box"
    assert _singularize("glasses") == "glass"
    assert _singularize("glass") == "glass"
    assert _singularize("houses") == "house"
    assert _singularize("bus") == "bus"          # stem would be too short
    assert _singularize("brown chairs") == "brown chair"
    assert _singularize("3") == "3"


def test_diversify_deterministic_for_seed():
    annotation = {"task": "qa", "question": "what color is the wall?"}
    a = diversify_template(annotation, random.Random(12))
    b = diversify_template(annotation, random.Random(12))
    assert a == b
    assert "what color is the wall?" in a


def test_diversify_coverage_over_thousand_draws():
    library = TemplateLibrary.load()
    annotation = {"task": "qa", "question": "Q"}
    rng = random.Random(0)
    counts = {}
    for _ in range(1000):
        text = diversify_template(annotation, rng, library)
        counts[text] = counts.get(text, 0) + 1
    assert len(counts) == len(library.by_task["qa"])
    assert all(count >= 50 for count in counts.values())


def test_diversify_caption_embeds_id_exactly_once():
    annotation = {"task": "dense_caption", "object_id": 41}
    rng = random.Random(3)
    for _ in range(20):
        text = diversify_template(annotation, rng)
        assert text.count("41") == 1


def test_diversify_grounding_embeds_description():
    annotation = {"task": "visual_grounding", "description": "the red box near the door"}
    rng = random.Random(4)
    for _ in range(20):
        assert "the red box near the door" in diversify_template(annotation, rng)


def test_diversify_missing_field_raises():
    with pytest.raises(PromptError):
        diversify_template({"task": "qa"}, random.Random(0))
    with pytest.raises(PromptError):
        diversify_template({"task": "unknown", "x": 1}, random.Random(0))


def test_template_library_validation(tmp_path):
    bad = tmp_path / "templates.tsv"
    bad.write_text("qa no tab here\n")
    with pytest.raises(ValueError):
        TemplateLibrary.load(bad)
    sparse = tmp_path / "sparse.tsv"
    sparse.write_text("qa\t{question}\n")
    with pytest.raises(ValueError):
        TemplateLibrary.load(sparse)
