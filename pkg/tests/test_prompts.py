import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgsumm.model import ErrorCategory
from fgsumm.prompts import (
    ALLOWED_FEATURES,
    DEFAULT_ALIGNMENT,
    DEFAULT_FACT_CHECK,
    PromptVariant,
    Schema,
    Task,
    VariantMismatch,
    number_lines,
    render_alignment,
    render_fact_check,
    render_keyfact_extraction,
    render_summarize,
    template_versions,
)

DOC = "The council met on Monday and approved a park budget."
SENTS = ["The council met on Tuesday.", "It approved a park budget.", "The budget is large."]
KEYFACTS = ["The council met on Monday.", "A park budget was approved.", "The budget is two million.", "The mayor spoke."]


def test_default_variants():
    assert DEFAULT_FACT_CHECK.features == {"instruction", "categorization", "reasoning"}
    assert DEFAULT_ALIGNMENT.features == {"instruction"}


def test_fact_check_default():
    p = render_fact_check(DOC, SENTS)
    assert p.expected_schema is Schema.FACT_CHECK_ARRAY
    assert p.expected_count == 3
    assert DOC in p.text
    for cat in ErrorCategory:
        assert cat.value in p.text
    assert '"reason"' in p.text and '"evidence"' not in p.text


def test_fact_check_basic_has_no_category_list():
    p = render_fact_check(DOC, SENTS, PromptVariant.parse(Task.FACT_CHECK, "basic"))
    for cat in ErrorCategory:
        if cat is not ErrorCategory.NO_ERROR:
            assert cat.value not in p.text
    assert "Instruction:" not in p.text


@pytest.mark.parametrize("features", ALLOWED_FEATURES[Task.FACT_CHECK])
def test_fact_check_keys_follow_features(features):
    p = render_fact_check(DOC, SENTS, PromptVariant(Task.FACT_CHECK, features))
    assert ('"reason"' in p.text) == ("reasoning" in features)
    assert ('"evidence"' in p.text) == ("evidence_mapping" in features)
    assert '"category"' in p.text and '"sentence"' in p.text
    assert ("Instruction:" in p.text) == ("instruction" in features)


def test_instruction_alone_is_not_a_fact_check_variant():
    with pytest.raises(VariantMismatch):
        PromptVariant(Task.FACT_CHECK, frozenset({"instruction"}))
    with pytest.raises(VariantMismatch):
        PromptVariant.parse(Task.KEYFACT_ALIGNMENT, "instruction+categorization")
    with pytest.raises(VariantMismatch):
        PromptVariant.parse(Task.FACT_CHECK, "instruction+magic")


def test_variant_parse_key_round_trip():
    for task, sets in ALLOWED_FEATURES.items():
        for feats in sets:
            v = PromptVariant(task, feats)
            assert PromptVariant.parse(task, v.feature_key) == v


def test_wrong_task_variant_rejected():
    with pytest.raises(VariantMismatch):
        render_fact_check(DOC, SENTS, DEFAULT_ALIGNMENT)
    with pytest.raises(VariantMismatch):
        render_alignment(KEYFACTS, SENTS, DEFAULT_FACT_CHECK)


def test_alignment_default():
    p = render_alignment(KEYFACTS, SENTS)
    assert p.expected_count == 4 and p.expected_schema is Schema.ALIGNMENT_ARRAY
    for key in ('"key fact"', '"response"', '"line numbers"', '"Yes"', '"No"'):
        assert key in p.text
    assert "Instruction:" in p.text


def test_alignment_basic_has_no_instruction_block():
    p = render_alignment(KEYFACTS, SENTS, PromptVariant.parse(Task.KEYFACT_ALIGNMENT, "basic"))
    assert "Instruction:" not in p.text
    assert "First," not in p.text


def test_alignment_reasoning_variant():
    p = render_alignment(KEYFACTS, SENTS, PromptVariant.parse(Task.KEYFACT_ALIGNMENT, "instruction+reasoning"))
    assert '"reason"' in p.text


def test_preconditions():
    with pytest.raises(ValueError):
        render_alignment([], SENTS)
    with pytest.raises(ValueError):
        render_fact_check(DOC, [])
    with pytest.raises(ValueError):
        render_keyfact_extraction("  ")
    with pytest.raises(ValueError):
        render_summarize("")


def test_keyfact_extraction_prompt():
    p = render_keyfact_extraction("The council approved a budget.")
    assert p.expected_schema is Schema.KEYFACT_OBJECT
    assert "16" in p.text and '"key facts"' in p.text
    assert "The council approved a budget." in p.text


def test_summarize_prompt_deterministic():
    a, b = render_summarize(DOC), render_summarize(DOC)
    assert a.expected_schema is Schema.PLAIN_SUMMARY
    assert a.text == b.text and a.sha256 == b.sha256
    assert DOC in a.text


def test_template_versions_cover_all_templates():
    versions = template_versions()
    assert len(versions) == 10
    assert all(re.fullmatch(r"[0-9a-f]{12}", v) for v in versions.values())


_item = st.text(alphabet="abcxyz $[]{}\"'.", min_size=1, max_size=20).filter(lambda s: s.strip())


@settings(max_examples=150, deadline=None)
@given(st.lists(_item, min_size=1, max_size=8), st.lists(_item, min_size=1, max_size=8))
def test_every_item_numbered_once_in_order(sentences, keyfacts):
    p = render_alignment(keyfacts, sentences)
    assert number_lines(sentences) in p.text
    assert number_lines(keyfacts) in p.text
    assert render_alignment(keyfacts, sentences).text == p.text
    f = render_fact_check("Doc $x text", sentences)
    assert number_lines(sentences) in f.text
    assert "Doc $x text" in f.text
    positions = [f.text.index(f"[{i}] {s}") for i, s in enumerate(sentences, 1)]
    assert positions == sorted(positions)
