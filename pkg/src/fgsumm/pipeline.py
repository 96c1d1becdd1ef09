"""End-to-end evaluation: segment, render, complete, parse, score."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from . import __version__
from .gateway import BackendConfig, CompletionResult, Gateway
from .ingest import iter_jsonl, summary_sentences, write_jsonl
from .model import (
    DIMENSIONS,
    AlignmentEntry,
    AlignmentGraph,
    Document,
    EvalInstance,
    FactCheckVerdict,
    KeyfactList,
    KeyfactOrigin,
    Provenance,
    ScoreTriple,
    normalize_category,
)
from .parsing import (
    FailureReason,
    ParseMode,
    ParseOutcome,
    ParseStatus,
    ParseWarning,
    parse_alignment,
    parse_fact_check,
    parse_keyfacts,
    parse_summary,
    success_ratio,
)
from .prompts import (
    DEFAULT_ALIGNMENT,
    DEFAULT_FACT_CHECK,
    PromptVariant,
    RenderedPrompt,
    Task,
    render_alignment,
    render_fact_check,
    render_keyfact_extraction,
    render_summarize,
    template_versions,
)
from .scoring import ALIGNMENT, FACT_CHECK, TASKS, ScoredInstance, score_instance

log = logging.getLogger(__name__)


class KeyfactSource(str, enum.Enum):
    PROVIDED = "provided"
    EXTRACT_FROM_REFERENCE = "extract_from_reference"


class RunConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    task_set: frozenset[str] = frozenset(TASKS)
    fact_check_variant: PromptVariant = DEFAULT_FACT_CHECK
    alignment_variant: PromptVariant = DEFAULT_ALIGNMENT
    backend: BackendConfig = field(default_factory=BackendConfig)
    parse_mode: ParseMode = ParseMode.STRICT
    keyfact_source: KeyfactSource = KeyfactSource.PROVIDED
    reference_field: str = "reference"
    keyfact_cache_path: Optional[Path] = None
    include_raw: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "task_set", frozenset(self.task_set))
        object.__setattr__(self, "parse_mode", ParseMode(self.parse_mode))
        object.__setattr__(self, "keyfact_source", KeyfactSource(self.keyfact_source))
        if not self.task_set or not self.task_set <= set(TASKS):
            raise RunConfigError(f"task_set must be a non-empty subset of {list(TASKS)}")
        if self.fact_check_variant.task is not Task.FACT_CHECK:
            raise RunConfigError("fact_check_variant must be a fact_check variant")
        if self.alignment_variant.task is not Task.KEYFACT_ALIGNMENT:
            raise RunConfigError("alignment_variant must be a keyfact_alignment variant")

    def validate_for(self, instances: Sequence[EvalInstance]) -> None:
        """Alignment needs keyfacts for every instance, provided or extractable."""
        if ALIGNMENT not in self.task_set:
            return
        if self.keyfact_source is KeyfactSource.PROVIDED:
            missing = [i.instance_id for i in instances if i.keyfacts is None]
            if missing:
                raise RunConfigError(
                    f"alignment needs keyfacts; {len(missing)} instance(s) have none "
                    f"(first: {missing[0]}). Supply keyfacts or enable extraction."
                )
        else:
            missing = [i.instance_id for i in instances if not _reference(i, self.reference_field)]
            if missing:
                raise RunConfigError(
                    f"keyfact extraction needs a non-empty {self.reference_field!r} field; "
                    f"missing for {len(missing)} instance(s) (first: {missing[0]})"
                )

    def describe(self) -> dict[str, Any]:
        return {
            "tasks": [t for t in TASKS if t in self.task_set],
            "variants": {
                FACT_CHECK: self.fact_check_variant.feature_key,
                ALIGNMENT: self.alignment_variant.feature_key,
            },
            "parse_mode": self.parse_mode.value,
            "keyfact_source": self.keyfact_source.value,
            "reference_field": self.reference_field,
            "backend": self.backend.describe(),
        }


def _reference(instance: EvalInstance, field_name: str) -> Optional[str]:
    value = instance.extra.get(field_name)
    return value if isinstance(value, str) and value.strip() else None


# --------------------------------------------------------------------------
# results rows


def _fraction_str(value: Optional[Fraction]) -> Optional[str]:
    return None if value is None else f"{value.numerator}/{value.denominator}"


def scores_to_dict(scores: ScoreTriple) -> dict[str, Any]:
    out: dict[str, Any] = dict(scores.as_floats())
    out["provenance"] = scores.provenance.value
    out["exact"] = {d: _fraction_str(scores.get(d)) for d in DIMENSIONS}
    return out


def scores_from_dict(data: Mapping[str, Any]) -> ScoreTriple:
    exact = data.get("exact") or {}
    values = []
    for d in DIMENSIONS:
        if exact.get(d) is not None:
            values.append(Fraction(exact[d]))
        elif data.get(d) is not None:
            values.append(Fraction(data[d]).limit_denominator(10_000))
        else:
            values.append(None)
    return ScoreTriple(*values, Provenance(data.get("provenance", "computed")))


def scored_to_row(scored: ScoredInstance, include_raw: bool = True) -> dict[str, Any]:
    row: dict[str, Any] = {
        "instance_id": scored.instance_id,
        "system_id": scored.system_id,
        "num_sentences": scored.n_sentences,
        "num_keyfacts": scored.n_keyfacts,
        "scores": scores_to_dict(scored.scores),
        "verdicts": None,
        "alignment": None,
        "parse": {task: o.summary() for task, o in scored.parse_outcomes.items()},
    }
    if scored.verdicts is not None:
        row["verdicts"] = [
            {"index": v.sentence_index, "category": v.category.value, "reason": v.reason}
            | ({"evidence": v.evidence} if v.evidence is not None else {})
            for v in scored.verdicts
        ]
    if scored.alignment is not None:
        row["alignment"] = [
            {"index": e.keyfact_index, "matched": e.matched, "line_numbers": sorted(e.line_numbers)}
            for e in scored.alignment.entries
        ]
    if include_raw:
        row["raw"] = dict(scored.raw)
    return row


def scored_from_row(row: Mapping[str, Any]) -> ScoredInstance:
    verdicts = None
    if row.get("verdicts") is not None:
        verdicts = tuple(
            FactCheckVerdict(v["index"], normalize_category(v["category"]), v.get("reason", ""), v.get("evidence"))
            for v in row["verdicts"]
        )
    alignment = None
    if row.get("alignment") is not None:
        alignment = AlignmentGraph(
            tuple(AlignmentEntry(e["index"], e["matched"], frozenset(e["line_numbers"])) for e in row["alignment"])
        )
    outcomes = {}
    for task, info in (row.get("parse") or {}).items():
        if info.get("status") == "ok":
            payload = verdicts if task == FACT_CHECK else alignment
            outcomes[task] = ParseOutcome(ParseStatus.OK, None, payload)
        else:
            outcomes[task] = ParseOutcome.failed(FailureReason(info["reason"]), info.get("detail", ""))
    return ScoredInstance(
        instance_id=row["instance_id"],
        system_id=row["system_id"],
        scores=scores_from_dict(row["scores"]),
        n_sentences=row.get("num_sentences", len(verdicts or ())),
        n_keyfacts=row.get("num_keyfacts"),
        verdicts=verdicts,
        alignment=alignment,
        parse_outcomes=outcomes,
        raw=row.get("raw") or {},
    )


def load_results(path) -> list[ScoredInstance]:
    return [scored_from_row(row) for _, row in iter_jsonl(path)]


# --------------------------------------------------------------------------
# keyfact extraction


@dataclass
class KeyfactExtractionRun:
    keyfacts: dict[str, KeyfactList]
    outcomes: dict[str, ParseOutcome]
    rows: list[dict[str, Any]]
    errors: list[dict[str, Any]]

    def summary(self) -> dict[str, Any]:
        out: dict[str, Any] = {"extracted": len(self.rows), "errors": len(self.errors)}
        if self.outcomes:
            out["success_ratio"] = _ratio_dict(success_ratio(self.outcomes.values()))
        return out


def _transport_failure(result: CompletionResult) -> ParseOutcome:
    return ParseOutcome.failed(
        FailureReason.EMPTY_OUTPUT,
        "no reply",
        [ParseWarning("transport_error", result.error or "transport error")],
    )


def _parse_with_transport(result: CompletionResult, parse) -> ParseOutcome:
    if not result.ok:
        return _transport_failure(result)
    outcome = parse(result.raw_text)
    if result.warnings:
        extra = tuple(ParseWarning("gateway", w) for w in result.warnings)
        outcome = ParseOutcome(outcome.status, outcome.failure_reason, outcome.payload, outcome.warnings + extra, outcome.detail)
    return outcome


def load_keyfact_cache(path: Optional[Path]) -> dict[str, KeyfactList]:
    if path is None or not Path(path).exists():
        return {}
    out = {}
    for _, row in iter_jsonl(path):
        out[row["instance_id"]] = KeyfactList(
            row["instance_id"], tuple(row["keyfacts"]), KeyfactOrigin(row.get("origin", "machine"))
        )
    return out


def run_keyfact_extraction(
    instances: Sequence[EvalInstance],
    config: RunConfig,
    gateway: Optional[Gateway] = None,
    reuse: Optional[Mapping[str, KeyfactList]] = None,
) -> KeyfactExtractionRun:
    """Extract machine keyfacts from each instance's reference summary.

    Instances found in ``reuse`` are not re-requested. Parse failures and
    missing references become error records; such instances get no keyfacts.
    """
    gateway = gateway or Gateway(config.backend)
    reuse = dict(reuse or {})
    keyfacts: dict[str, KeyfactList] = {}
    outcomes: dict[str, ParseOutcome] = {}
    errors: list[dict[str, Any]] = []
    prompts: list[RenderedPrompt] = []
    pending: list[EvalInstance] = []
    for inst in instances:
        if inst.instance_id in reuse:
            keyfacts[inst.instance_id] = reuse[inst.instance_id]
            continue
        ref = _reference(inst, config.reference_field)
        if ref is None:
            errors.append({"instance_id": inst.instance_id, "error": f"missing {config.reference_field!r} field"})
            continue
        prompts.append(render_keyfact_extraction(ref))
        pending.append(inst)

    results = gateway.complete_batch(prompts, [i.instance_id for i in pending])
    for inst, result in zip(pending, results):
        outcome = _parse_with_transport(result, lambda raw, iid=inst.instance_id: parse_keyfacts(raw, iid))
        outcomes[inst.instance_id] = outcome
        if outcome.ok:
            keyfacts[inst.instance_id] = outcome.payload
        else:
            errors.append(
                {"instance_id": inst.instance_id, "error": outcome.failure_reason.value, "detail": outcome.detail}
            )

    rows = []
    for inst in instances:
        kf = keyfacts.get(inst.instance_id)
        if kf is None:
            continue
        row: dict[str, Any] = {"instance_id": inst.instance_id, "keyfacts": list(kf.keyfacts), "origin": kf.origin.value}
        outcome = outcomes.get(inst.instance_id)
        if outcome is not None and outcome.warnings:
            row["warnings"] = [w.message for w in outcome.warnings]
        rows.append(row)
    return KeyfactExtractionRun(keyfacts, outcomes, rows, errors)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvaluationRun:
    scored: list[ScoredInstance]
    summary: dict[str, Any]

    def rows(self, include_raw: bool = True) -> list[dict[str, Any]]:
        return [scored_to_row(s, include_raw) for s in self.scored]


def _ratio_dict(value: Fraction) -> dict[str, Any]:
    return {"value": float(value), "exact": _fraction_str(value)}


def run_summary(scored: Sequence[ScoredInstance], config: RunConfig) -> dict[str, Any]:
    ratios = {}
    for task in TASKS:
        outcomes = [s.parse_outcomes[task] for s in scored if task in s.parse_outcomes]
        if outcomes:
            ok = sum(1 for o in outcomes if o.ok)
            ratios[task] = _ratio_dict(success_ratio(outcomes)) | {"ok": ok, "total": len(outcomes)}
    reasons: dict[str, int] = {}
    for s in scored:
        for o in s.parse_outcomes.values():
            if not o.ok:
                reasons[o.failure_reason.value] = reasons.get(o.failure_reason.value, 0) + 1
    return {
        "tool_version": __version__,
        "config": config.describe(),
        "template_versions": template_versions(),
        "counts": {
            "instances": len(scored),
            "computed": sum(1 for s in scored if s.scores.provenance is Provenance.COMPUTED),
            "failure_default": sum(1 for s in scored if s.scores.provenance is Provenance.FAILURE_DEFAULT),
            "degenerate": sum(1 for s in scored if s.n_sentences == 0),
        },
        "failure_reasons": dict(sorted(reasons.items())),
        "success_ratio": ratios,
    }


def run_evaluation(
    instances: Sequence[EvalInstance],
    config: RunConfig,
    gateway: Optional[Gateway] = None,
) -> EvaluationRun:
    """Score every instance; per-instance failures are recorded, never raised."""
    config.validate_for(instances)
    gateway = gateway or Gateway(config.backend)
    want_fact = FACT_CHECK in config.task_set
    want_align = ALIGNMENT in config.task_set

    extraction: Optional[KeyfactExtractionRun] = None
    keyfacts: dict[str, KeyfactList] = {}
    if want_align:
        if config.keyfact_source is KeyfactSource.EXTRACT_FROM_REFERENCE:
            cached = load_keyfact_cache(config.keyfact_cache_path)
            extraction = run_keyfact_extraction(instances, config, gateway, reuse=cached)
            keyfacts = extraction.keyfacts
            if config.keyfact_cache_path is not None:
                merged = dict(cached) | keyfacts
                write_jsonl(
                    config.keyfact_cache_path,
                    (
                        {"instance_id": iid, "keyfacts": list(kf.keyfacts), "origin": kf.origin.value}
                        for iid, kf in merged.items()
                    ),
                )
        else:
            keyfacts = {i.instance_id: i.keyfacts for i in instances if i.keyfacts is not None}

    sentences = {i.instance_id: summary_sentences(i) for i in instances}
    jobs: list[tuple[int, str]] = []
    prompts: list[RenderedPrompt] = []
    for pos, inst in enumerate(instances):
        sents = sentences[inst.instance_id]
        if not sents:
            continue
        if want_fact:
            jobs.append((pos, FACT_CHECK))
            prompts.append(render_fact_check(inst.document.text, sents, config.fact_check_variant))
        kf = keyfacts.get(inst.instance_id)
        if want_align and kf is not None:
            jobs.append((pos, ALIGNMENT))
            prompts.append(render_alignment(kf.keyfacts, sents, config.alignment_variant))

    results = gateway.complete_batch(prompts, [instances[pos].instance_id for pos, _ in jobs])
    by_job = {job: (prompt, result) for job, prompt, result in zip(jobs, prompts, results)}

    scored = []
    for pos, inst in enumerate(instances):
        sents = sentences[inst.instance_id]
        n = len(sents)
        kf = keyfacts.get(inst.instance_id)
        m = kf.m if kf is not None else None
        outcomes: dict[str, ParseOutcome] = {}
        raw: dict[str, str] = {}

        for task in (FACT_CHECK, ALIGNMENT):
            if task not in config.task_set:
                continue
            if n == 0:
                outcomes[task] = ParseOutcome.failed(FailureReason.EMPTY_OUTPUT, "summary has no sentences")
                continue
            if task == ALIGNMENT and kf is None:
                reason = FailureReason.EMPTY_OUTPUT
                detail = "no keyfacts available"
                if extraction is not None and inst.instance_id in extraction.outcomes:
                    failed = extraction.outcomes[inst.instance_id]
                    reason = failed.failure_reason or reason
                    detail = f"keyfact extraction failed: {failed.detail}"
                outcomes[task] = ParseOutcome.failed(reason, detail)
                continue
            prompt, result = by_job[(pos, task)]
            raw[task] = result.raw_text
            if task == FACT_CHECK:
                outcomes[task] = _parse_with_transport(
                    result, lambda text: parse_fact_check(text, prompt.expected_count, config.parse_mode)
                )
            else:
                outcomes[task] = _parse_with_transport(
                    result, lambda text: parse_alignment(text, prompt.expected_count, n, config.parse_mode)
                )

        fact = outcomes.get(FACT_CHECK)
        align = outcomes.get(ALIGNMENT)
        scores = score_instance(fact, align, n, m, config.task_set)
        scored.append(
            ScoredInstance(
                instance_id=inst.instance_id,
                system_id=inst.system_id,
                scores=scores,
                n_sentences=n,
                n_keyfacts=m,
                verdicts=fact.payload if fact is not None and fact.ok else None,
                alignment=align.payload if align is not None and align.ok else None,
                parse_outcomes=outcomes,
                raw=raw if config.include_raw else {},
            )
        )

    summary = run_summary(scored, config)
    if extraction is not None:
        summary["keyfact_extraction"] = extraction.summary()
    return EvaluationRun(scored, summary)


# --------------------------------------------------------------------------
# summarization


@dataclass
class SummarizeRun:
    rows: list[dict[str, Any]]
    errors: list[dict[str, Any]]


def run_summarize(
    documents: Sequence[Document], config: RunConfig, gateway: Optional[Gateway] = None
) -> SummarizeRun:
    """Generate one summary per document; rows are ready to be evaluated as instances."""
    if not documents:
        raise ValueError("no documents to summarize")
    gateway = gateway or Gateway(config.backend)
    model = config.backend.model_name
    prompts = [render_summarize(d.text) for d in documents]
    results = gateway.complete_batch(prompts, [d.doc_id for d in documents])
    rows, errors = [], []
    for doc, result in zip(documents, results):
        outcome = _parse_with_transport(result, parse_summary)
        if not outcome.ok:
            errors.append(
                {"doc_id": doc.doc_id, "error": result.error if not result.ok else outcome.failure_reason.value}
            )
            continue
        rows.append(
            {
                "instance_id": f"{doc.doc_id}::{model}",
                "doc_id": doc.doc_id,
                "system_id": model,
                "document": doc.text,
                "summary": outcome.payload,
            }
        )
    return SummarizeRun(rows, errors)
