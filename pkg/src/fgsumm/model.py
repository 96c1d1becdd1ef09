"""Shared domain types: instances, verdicts, alignments, scores, gold labels."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Optional

MAX_MACHINE_KEYFACTS = 16


class ErrorCategory(str, enum.Enum):
    """The nine fact-checking outcomes. Values are the canonical prompt strings."""

    OUT_OF_CONTEXT = "out-of-context error"
    ENTITY = "entity error"
    PREDICATE = "predicate error"
    CIRCUMSTANCE = "circumstance error"
    GRAMMATICAL = "grammatical error"
    LINK = "discourse link error"
    COREFERENCE = "coreference error"
    OTHER = "other error"
    NO_ERROR = "no error"

    @property
    def code(self) -> str:
        return _CODES[self]

    @property
    def has_error(self) -> bool:
        return self is not ErrorCategory.NO_ERROR

    @property
    def is_extrinsic(self) -> bool:
        return self is ErrorCategory.OUT_OF_CONTEXT

    @property
    def is_intrinsic(self) -> bool:
        return self in INTRINSIC_CATEGORIES


_CODES = {
    ErrorCategory.OUT_OF_CONTEXT: "OutE",
    ErrorCategory.ENTITY: "EntE",
    ErrorCategory.PREDICATE: "PredE",
    ErrorCategory.CIRCUMSTANCE: "CirE",
    ErrorCategory.GRAMMATICAL: "GramE",
    ErrorCategory.LINK: "LinkE",
    ErrorCategory.COREFERENCE: "CorefE",
    ErrorCategory.OTHER: "OtherE",
    ErrorCategory.NO_ERROR: "NoError",
}

INTRINSIC_CATEGORIES = frozenset(
    {
        ErrorCategory.ENTITY,
        ErrorCategory.PREDICATE,
        ErrorCategory.CIRCUMSTANCE,
        ErrorCategory.GRAMMATICAL,
        ErrorCategory.LINK,
        ErrorCategory.COREFERENCE,
    }
)

# The seven typed error categories used for error localization (excludes OTHER and NO_ERROR).
LOCALIZATION_CATEGORIES = (
    ErrorCategory.OUT_OF_CONTEXT,
    ErrorCategory.ENTITY,
    ErrorCategory.PREDICATE,
    ErrorCategory.CIRCUMSTANCE,
    ErrorCategory.GRAMMATICAL,
    ErrorCategory.LINK,
    ErrorCategory.COREFERENCE,
)

_SYNONYMS = {
    ErrorCategory.OUT_OF_CONTEXT: [
        "out of context error",
        "out-of-context",
        "out of context",
        "outofcontext error",
        "extrinsic error",
    ],
    ErrorCategory.ENTITY: ["entity"],
    ErrorCategory.PREDICATE: ["predicate"],
    ErrorCategory.CIRCUMSTANCE: [
        "circumstance",
        "circumstantial error",
        "circumstantial",
    ],
    ErrorCategory.GRAMMATICAL: ["grammatical", "grammar error"],
    ErrorCategory.LINK: [
        "discourse link",
        "link error",
        "linking error",
        "discourse error",
    ],
    ErrorCategory.COREFERENCE: ["coreference", "coref error"],
    ErrorCategory.OTHER: ["other", "others", "other errors", "error"],
    ErrorCategory.NO_ERROR: [
        "no errors",
        "none",
        "no-error",
        "correct",
        "factually correct",
    ],
}


def _key(raw: str) -> str:
    return re.sub(r"\s+", " ", raw.strip().lower())


NORMALIZATION_TABLE: dict[str, ErrorCategory] = {}
for _cat in ErrorCategory:
    NORMALIZATION_TABLE[_key(_cat.value)] = _cat
    NORMALIZATION_TABLE[_key(_cat.code)] = _cat
    for _syn in _SYNONYMS[_cat]:
        NORMALIZATION_TABLE[_key(_syn)] = _cat
del _cat, _syn


def normalize_category(raw: str) -> Optional[ErrorCategory]:
    """Map an LLM or annotator label to a category.

    Matching is case-insensitive and whitespace-trimmed; returns ``None``
    (the unknown marker) for anything outside the table. Unknown labels are
    never coerced here; that policy belongs to the parser.
    """
    if not isinstance(raw, str):
        return None
    return NORMALIZATION_TABLE.get(_key(raw))


def derive_binary(category: ErrorCategory) -> bool:
    return category.has_error


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.text or not self.text.strip():
            raise ValueError(f"document {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class SummaryRecord:
    """A summary as an ordered, 1-based list of sentences."""

    instance_id: str
    system_id: str
    sentences: tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.sentences)

    @property
    def degenerate(self) -> bool:
        return self.n == 0

    def numbered(self) -> list[tuple[int, str]]:
        return [(i, s) for i, s in enumerate(self.sentences, start=1)]


class KeyfactOrigin(str, enum.Enum):
    HUMAN = "human"
    MACHINE = "machine"


@dataclass(frozen=True)
class KeyfactList:
    instance_id: str
    keyfacts: tuple[str, ...]
    origin: KeyfactOrigin = KeyfactOrigin.HUMAN

    def __post_init__(self) -> None:
        if not self.keyfacts:
            raise ValueError(f"{self.instance_id}: keyfact list must be non-empty")
        if any(not isinstance(k, str) or not k.strip() for k in self.keyfacts):
            raise ValueError(f"{self.instance_id}: keyfacts must be non-empty strings")
        if self.origin is KeyfactOrigin.MACHINE and len(self.keyfacts) > MAX_MACHINE_KEYFACTS:
            raise ValueError(
                f"{self.instance_id}: machine keyfact lists are capped at {MAX_MACHINE_KEYFACTS}"
            )

    @property
    def m(self) -> int:
        return len(self.keyfacts)


@dataclass(frozen=True)
class FactCheckVerdict:
    sentence_index: int
    category: ErrorCategory
    reason: str = ""
    evidence: Optional[str] = None

    @property
    def has_error(self) -> bool:
        return self.category.has_error


@dataclass(frozen=True)
class AlignmentEntry:
    keyfact_index: int
    matched: bool
    line_numbers: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if not self.matched and self.line_numbers:
            raise ValueError(
                f"keyfact {self.keyfact_index} is unmatched but has line numbers"
            )


@dataclass(frozen=True)
class AlignmentGraph:
    """Bipartite keyfact-to-sentence alignment, one entry per keyfact."""

    entries: tuple[AlignmentEntry, ...]

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        return frozenset(
            (e.keyfact_index, s) for e in self.entries for s in e.line_numbers
        )

    @property
    def aligned_sentences(self) -> frozenset[int]:
        out: set[int] = set()
        for e in self.entries:
            out |= e.line_numbers
        return frozenset(out)

    @property
    def matched_keyfacts(self) -> frozenset[int]:
        return frozenset(e.keyfact_index for e in self.entries if e.matched)

    def validate(self, m: int, n: int) -> None:
        indices = sorted(e.keyfact_index for e in self.entries)
        if indices != list(range(1, m + 1)):
            raise ValueError(f"alignment covers keyfacts {indices}, expected 1..{m}")
        for e in self.entries:
            bad = [s for s in e.line_numbers if not 1 <= s <= n]
            if bad:
                raise ValueError(f"keyfact {e.keyfact_index}: line numbers {bad} outside 1..{n}")

    @classmethod
    def from_edges(cls, m: int, edges: Iterable[tuple[int, int]]) -> "AlignmentGraph":
        lines: dict[int, set[int]] = {k: set() for k in range(1, m + 1)}
        for k, s in edges:
            lines[k].add(s)
        return cls(
            tuple(
                AlignmentEntry(k, bool(lines[k]), frozenset(lines[k]))
                for k in range(1, m + 1)
            )
        )


class Provenance(str, enum.Enum):
    COMPUTED = "computed"
    FAILURE_DEFAULT = "failure_default"


@dataclass(frozen=True)
class ScoreTriple:
    """Faithfulness / completeness / conciseness as exact fractions.

    A component is ``None`` when its task was not part of the run.
    """

    faithfulness: Optional[Fraction]
    completeness: Optional[Fraction]
    conciseness: Optional[Fraction]
    provenance: Provenance = Provenance.COMPUTED

    def __post_init__(self) -> None:
        for name in DIMENSIONS:
            value = getattr(self, name)
            if value is None:
                continue
            if not isinstance(value, Fraction):
                object.__setattr__(self, name, Fraction(value))
                value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.provenance is Provenance.FAILURE_DEFAULT:
            expected = dict(zip(DIMENSIONS, _DEFAULT_VALUES))
            for name in DIMENSIONS:
                value = getattr(self, name)
                if value is not None and value != expected[name]:
                    raise ValueError("failure-default scores must be (1, 0, 0)")

    @classmethod
    def failure_default(
        cls, with_faithfulness: bool = True, with_alignment: bool = True
    ) -> "ScoreTriple":
        return cls(
            Fraction(1) if with_faithfulness else None,
            Fraction(0) if with_alignment else None,
            Fraction(0) if with_alignment else None,
            Provenance.FAILURE_DEFAULT,
        )

    def get(self, dimension: str) -> Optional[Fraction]:
        return getattr(self, dimension)

    def as_floats(self) -> dict[str, Optional[float]]:
        return {d: (None if self.get(d) is None else float(self.get(d))) for d in DIMENSIONS}


DIMENSIONS = ("faithfulness", "completeness", "conciseness")
_DEFAULT_VALUES = (Fraction(1), Fraction(0), Fraction(0))


@dataclass(frozen=True)
class GoldSentenceLabel:
    index: int
    has_error: bool
    category: Optional[ErrorCategory] = None


@dataclass(frozen=True)
class GoldKeyfactLabel:
    index: int
    matched: bool
    line_numbers: Optional[frozenset[int]] = None


@dataclass(frozen=True)
class GoldAnnotations:
    instance_id: str
    sentence_labels: Optional[tuple[GoldSentenceLabel, ...]] = None
    keyfact_labels: Optional[tuple[GoldKeyfactLabel, ...]] = None

    def scores(self, n: Optional[int] = None) -> ScoreTriple:
        """Human percentage scores derived from the gold labels.

        Conciseness needs per-keyfact line numbers and the sentence count ``n``.
        """
        faith = comp = conc = None
        if self.sentence_labels:
            ok = sum(1 for lab in self.sentence_labels if not lab.has_error)
            faith = Fraction(ok, len(self.sentence_labels))
        if self.keyfact_labels:
            comp = Fraction(
                sum(1 for lab in self.keyfact_labels if lab.matched),
                len(self.keyfact_labels),
            )
            if n is None and self.sentence_labels:
                n = len(self.sentence_labels)
            has_lines = all(lab.line_numbers is not None for lab in self.keyfact_labels)
            if n and has_lines:
                lines: set[int] = set()
                for lab in self.keyfact_labels:
                    if lab.matched:
                        lines |= lab.line_numbers or set()
                conc = Fraction(len(lines), n)
        return ScoreTriple(faith, comp, conc)


@dataclass(frozen=True)
class EvalInstance:
    """One document/summary pair plus optional keyfacts and gold labels."""

    instance_id: str
    system_id: str
    document: Document
    summary: Optional[str] = None
    summary_sentences: Optional[tuple[str, ...]] = None
    keyfacts: Optional[KeyfactList] = None
    gold: Optional[GoldAnnotations] = None
    extra: dict[str, Any] = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self) -> None:
        if not self.instance_id:
            raise ValueError("instance_id must be non-empty")
        if self.summary is None and self.summary_sentences is None:
            raise ValueError(f"{self.instance_id}: needs summary or summary_sentences")
