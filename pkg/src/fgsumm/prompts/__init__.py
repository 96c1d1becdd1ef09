"""Prompt rendering for fact checking, keyfact alignment, keyfact extraction and summarization.

Templates live next to this module as ``<task>.<feature1+feature2>.txt``
(``basic`` for the empty feature set) and use ``string.Template`` slots.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from string import Template
from typing import Iterable, Sequence

FEATURE_ORDER = ("instruction", "categorization", "reasoning", "evidence_mapping")


class Task(str, enum.Enum):
    FACT_CHECK = "fact_check"
    KEYFACT_ALIGNMENT = "keyfact_alignment"
    KEYFACT_EXTRACTION = "keyfact_extraction"
    SUMMARIZE = "summarize"


class Schema(str, enum.Enum):
    FACT_CHECK_ARRAY = "fact_check_array"
    ALIGNMENT_ARRAY = "alignment_array"
    KEYFACT_OBJECT = "keyfact_object"
    PLAIN_SUMMARY = "plain_summary"


ALLOWED_FEATURES: dict[Task, tuple[frozenset[str], ...]] = {
    Task.FACT_CHECK: (
        frozenset(),
        frozenset({"instruction", "categorization"}),
        frozenset({"instruction", "categorization", "reasoning"}),
        frozenset({"instruction", "categorization", "evidence_mapping"}),
        frozenset({"instruction", "categorization", "reasoning", "evidence_mapping"}),
    ),
    Task.KEYFACT_ALIGNMENT: (
        frozenset(),
        frozenset({"instruction"}),
        frozenset({"instruction", "reasoning"}),
    ),
    Task.KEYFACT_EXTRACTION: (frozenset(),),
    Task.SUMMARIZE: (frozenset(),),
}


class VariantMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PromptVariant:
    task: Task
    features: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(self, "features", frozenset(self.features))
        unknown = self.features - set(FEATURE_ORDER)
        if unknown:
            raise VariantMismatch(f"unknown prompt features: {sorted(unknown)}")
        if self.features not in ALLOWED_FEATURES[self.task]:
            raise VariantMismatch(
                f"feature set {self.feature_key!r} is not available for {self.task.value}; "
                f"choose one of {[_key(f) for f in ALLOWED_FEATURES[self.task]]}"
            )

    @property
    def feature_key(self) -> str:
        return _key(self.features)

    @property
    def template_key(self) -> str:
        return f"{self.task.value}.{self.feature_key}.txt"

    @classmethod
    def parse(cls, task: Task | str, spec: str) -> "PromptVariant":
        """Build from a CLI-style string such as ``instruction+categorization`` or ``basic``."""
        spec = spec.strip()
        feats: Iterable[str] = () if spec in ("", "basic") else spec.replace(",", "+").split("+")
        return cls(Task(task), frozenset(f.strip() for f in feats))


def _key(features: Iterable[str]) -> str:
    ordered = [f for f in FEATURE_ORDER if f in set(features)]
    return "+".join(ordered) if ordered else "basic"


DEFAULT_FACT_CHECK = PromptVariant(Task.FACT_CHECK, frozenset({"instruction", "categorization", "reasoning"}))
DEFAULT_ALIGNMENT = PromptVariant(Task.KEYFACT_ALIGNMENT, frozenset({"instruction"}))
EXTRACTION = PromptVariant(Task.KEYFACT_EXTRACTION)
SUMMARIZE = PromptVariant(Task.SUMMARIZE)


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    expected_schema: Schema
    expected_count: int
    task: Task
    template_key: str

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


@lru_cache(maxsize=None)
def load_template(template_key: str) -> str:
    return resources.files(__package__).joinpath("templates", template_key).read_text(encoding="utf-8")


def template_version(template_key: str) -> str:
    """Content hash of a template; changes whenever its wording changes."""
    return hashlib.sha256(load_template(template_key).encode("utf-8")).hexdigest()[:12]


def template_versions() -> dict[str, str]:
    keys = []
    for task, sets in ALLOWED_FEATURES.items():
        keys.extend(f"{task.value}.{_key(s)}.txt" for s in sets)
    return {k: template_version(k) for k in sorted(keys)}


def number_lines(items: Sequence[str]) -> str:
    return "\n".join(f"[{i}] {text}" for i, text in enumerate(items, start=1))


def _check_task(variant: PromptVariant, task: Task) -> None:
    if variant.task is not task:
        raise VariantMismatch(f"expected a {task.value} variant, got {variant.task.value}")


def _substitute(variant: PromptVariant, **slots: str) -> str:
    return Template(load_template(variant.template_key)).substitute(**slots).rstrip("\n") + "\n"


def render_fact_check(
    document: str, sentences: Sequence[str], variant: PromptVariant = DEFAULT_FACT_CHECK
) -> RenderedPrompt:
    _check_task(variant, Task.FACT_CHECK)
    if not sentences:
        raise ValueError("fact checking needs at least one summary sentence")
    if not document or not document.strip():
        raise ValueError("document must be non-empty")
    text = _substitute(
        variant,
        document=document.strip(),
        sentences=number_lines(sentences),
        num_sentences=str(len(sentences)),
    )
    return RenderedPrompt(text, Schema.FACT_CHECK_ARRAY, len(sentences), Task.FACT_CHECK, variant.template_key)


def render_alignment(
    keyfacts: Sequence[str], sentences: Sequence[str], variant: PromptVariant = DEFAULT_ALIGNMENT
) -> RenderedPrompt:
    _check_task(variant, Task.KEYFACT_ALIGNMENT)
    if not keyfacts:
        raise ValueError("keyfact alignment needs at least one keyfact")
    if not sentences:
        raise ValueError("keyfact alignment needs at least one summary sentence")
    text = _substitute(
        variant,
        sentences=number_lines(sentences),
        keyfacts=number_lines(keyfacts),
        num_keyfacts=str(len(keyfacts)),
    )
    return RenderedPrompt(
        text, Schema.ALIGNMENT_ARRAY, len(keyfacts), Task.KEYFACT_ALIGNMENT, variant.template_key
    )


def render_keyfact_extraction(reference_summary: str) -> RenderedPrompt:
    if not reference_summary or not reference_summary.strip():
        raise ValueError("reference summary must be non-empty")
    text = _substitute(EXTRACTION, reference=reference_summary.strip())
    return RenderedPrompt(text, Schema.KEYFACT_OBJECT, 0, Task.KEYFACT_EXTRACTION, EXTRACTION.template_key)


def render_summarize(document: str) -> RenderedPrompt:
    if not document or not document.strip():
        raise ValueError("document must be non-empty")
    text = _substitute(SUMMARIZE, document=document.strip())
    return RenderedPrompt(text, Schema.PLAIN_SUMMARY, 0, Task.SUMMARIZE, SUMMARIZE.template_key)


__all__ = [
    "DEFAULT_ALIGNMENT",
    "DEFAULT_FACT_CHECK",
    "PromptVariant",
    "RenderedPrompt",
    "Schema",
    "Task",
    "VariantMismatch",
    "render_alignment",
    "render_fact_check",
    "render_keyfact_extraction",
    "render_summarize",
    "template_version",
    "template_versions",
]
