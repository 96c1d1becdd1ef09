"""Percentage scores from parsed verdicts and alignments."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .model import AlignmentGraph, ErrorCategory, FactCheckVerdict, ScoreTriple
from .parsing import ParseOutcome

FACT_CHECK = "fact_check"
ALIGNMENT = "alignment"
TASKS = (FACT_CHECK, ALIGNMENT)


class CoverageError(ValueError):
    pass


def faithfulness(verdicts: Iterable[FactCheckVerdict], n: int) -> Fraction:
    """Share of sentences judged ``no error``."""
    verdicts = list(verdicts)
    if n < 1:
        raise CoverageError("faithfulness needs at least one sentence")
    indices = sorted(v.sentence_index for v in verdicts)
    if indices != list(range(1, n + 1)):
        raise CoverageError(f"verdicts cover {indices}, expected 1..{n}")
    return Fraction(sum(1 for v in verdicts if v.category is ErrorCategory.NO_ERROR), n)


def completeness(alignment: AlignmentGraph, m: int) -> Fraction:
    """Share of keyfacts labelled as matched."""
    if m < 1:
        raise CoverageError("completeness needs at least one keyfact")
    indices = sorted(e.keyfact_index for e in alignment.entries)
    if indices != list(range(1, m + 1)):
        raise CoverageError(f"alignment covers keyfacts {indices}, expected 1..{m}")
    return Fraction(len(alignment.matched_keyfacts), m)


def conciseness(alignment: AlignmentGraph, n: int) -> Fraction:
    """Share of sentences aligned to at least one keyfact."""
    if n < 1:
        raise CoverageError("conciseness needs at least one sentence")
    return Fraction(len(alignment.aligned_sentences), n)


def score_instance(
    fact_outcome: Optional[ParseOutcome],
    align_outcome: Optional[ParseOutcome],
    n: int,
    m: Optional[int],
    task_set: Iterable[str] = TASKS,
) -> ScoreTriple:
    """Combine both task outcomes into a ScoreTriple.

    Any failed required task (or an empty summary) yields the (1, 0, 0)
    failure default for the requested dimensions.
    """
    tasks = frozenset(task_set)
    if not tasks or not tasks <= set(TASKS):
        raise ValueError(f"task_set must be a non-empty subset of {TASKS}, got {sorted(tasks)}")
    want_fact = FACT_CHECK in tasks
    want_align = ALIGNMENT in tasks

    required = []
    if want_fact:
        required.append(fact_outcome)
    if want_align:
        required.append(align_outcome)
    if n < 1 or any(o is None or not o.ok for o in required):
        return ScoreTriple.failure_default(want_fact, want_align)

    faith = comp = conc = None
    if want_fact:
        faith = faithfulness(fact_outcome.payload, n)
    if want_align:
        if not m:
            return ScoreTriple.failure_default(want_fact, want_align)
        comp = completeness(align_outcome.payload, m)
        conc = conciseness(align_outcome.payload, n)
    return ScoreTriple(faith, comp, conc)


@dataclass(frozen=True)
class ScoredInstance:
    instance_id: str
    system_id: str
    scores: ScoreTriple
    n_sentences: int
    n_keyfacts: Optional[int] = None
    verdicts: Optional[tuple[FactCheckVerdict, ...]] = None
    alignment: Optional[AlignmentGraph] = None
    parse_outcomes: Mapping[str, ParseOutcome] = field(default_factory=dict)
    raw: Mapping[str, str] = field(default_factory=dict)

    @property
    def parse_ok(self) -> bool:
        return all(o.ok for o in self.parse_outcomes.values())


def failed_tasks(outcomes: Mapping[str, ParseOutcome]) -> Sequence[str]:
    return [task for task, o in outcomes.items() if not o.ok]
