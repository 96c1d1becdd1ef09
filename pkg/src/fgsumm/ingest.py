"""Dataset loading, gold-label joins and rule-based sentence segmentation."""

from __future__ import annotations

import json
import re
from dataclasses import replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Optional, Sequence, Union

from .model import (
    Document,
    ErrorCategory,
    EvalInstance,
    GoldAnnotations,
    GoldKeyfactLabel,
    GoldSentenceLabel,
    KeyfactList,
    KeyfactOrigin,
    normalize_category,
)

PathLike = Union[str, Path]

_KNOWN_FIELDS = {
    "instance_id",
    "system_id",
    "document",
    "doc_id",
    "summary",
    "summary_sentences",
    "keyfacts",
}


class SchemaError(ValueError):
    def __init__(self, line: int, field: Optional[str], message: str):
        self.line = line
        self.field = field
        where = f"line {line}" + (f", field {field!r}" if field else "")
        super().__init__(f"{where}: {message}")


class JoinError(KeyError):
    def __init__(self, instance_id: str, message: str = "no matching instance"):
        self.instance_id = instance_id
        super().__init__(f"{instance_id}: {message}")

    def __str__(self) -> str:
        return self.args[0]


class ShapeError(ValueError):
    """Gold label counts disagree with the instance; ``problems`` lists every offender."""

    def __init__(self, problems: Sequence[tuple[str, str]]):
        self.problems = list(problems)
        super().__init__("; ".join(f"{iid}: {msg}" for iid, msg in self.problems))


class DegenerateInputError(ValueError):
    pass


# --------------------------------------------------------------------------
# segmentation

ABBREVIATIONS = frozenset(
    """
    mr. mrs. ms. dr. prof. sr. jr. st. mt. ft. gen. gov. sen. rep. rev. capt.
    col. lt. sgt. cmdr. adm. pres. supt. det. insp. hon.
    inc. ltd. co. corp. bros. dept. univ. assn. est.
    jan. feb. apr. jun. jul. aug. sep. sept. oct. nov. dec.
    mon. tue. tues. thu. thur. thurs. fri.
    approx. vs. v. e.g. i.e. cf. al.
    u.s. u.k. u.n. u.s.a. e.u. d.c. a.m. p.m. ph.d. b.a. m.a. m.d.
    """.split()
)
# only abbreviations when a number follows ("No. 5", "Vol. 2")
NUMERIC_ABBREVIATIONS = frozenset("no. nos. vol. vols. pp. fig. figs.".split())

_BOUNDARY = re.compile(
    r"""
    [.!?]+            # terminal punctuation run
    ['"’”)\]]*   # optional closing quotes / brackets
    (?=\s+['"‘“(\[]*[A-Z0-9])   # whitespace, then capital, quote or digit
    """,
    re.VERBOSE,
)
_INITIAL = re.compile(r"^(?:[A-Za-z]\.)+$")


def _is_abbreviation(text: str, end: int) -> bool:
    """True when the period ending at ``end`` closes a known abbreviation or initial."""
    start = end
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    token = text[start:end].lstrip("(\"'“‘[")
    if not token.endswith("."):
        return False
    if token.lower() in ABBREVIATIONS:
        return True
    if token.lower() in NUMERIC_ABBREVIATIONS:
        rest = text[end:].lstrip()
        return bool(rest) and rest[0].isdigit()
    # single initials such as "J." in "J. Smith"
    return bool(_INITIAL.match(token)) and len(token) == 2 and token[0].isupper()


def segment_sentences(summary_text: str) -> list[str]:
    """Split a summary into sentences.

    A boundary is ``.``, ``!`` or ``?`` (plus any closing quotes/brackets)
    followed by whitespace and a capital letter, quote or digit. Periods that
    close a stop-listed abbreviation or a single initial are not boundaries.
    Decimal numbers never match because the period is not followed by
    whitespace.
    """
    text = summary_text.strip() if summary_text else ""
    if not text:
        raise DegenerateInputError("summary is empty after trimming")

    pieces: list[str] = []
    start = 0
    for match in _BOUNDARY.finditer(text):
        punct = match.group(0)
        if punct.startswith(".") and len(punct.rstrip("'\"’”)]")) == 1:
            if _is_abbreviation(text, match.start() + 1):
                continue
        pieces.append(text[start : match.end()])
        start = match.end()
    pieces.append(text[start:])
    out = [p.strip() for p in pieces if p.strip()]
    if not out:
        raise DegenerateInputError("summary produced no sentences")
    return out


def summary_sentences(instance: EvalInstance) -> tuple[str, ...]:
    """Pre-split sentences win; otherwise segment the raw summary.

    Returns an empty tuple for a blank summary (a degenerate, unscoreable instance).
    """
    if instance.summary_sentences is not None:
        return tuple(instance.summary_sentences)
    try:
        return tuple(segment_sentences(instance.summary or ""))
    except DegenerateInputError:
        return ()


# --------------------------------------------------------------------------
# JSONL plumbing


def iter_jsonl(path: PathLike) -> Iterator[tuple[int, Any]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(lineno, None, f"invalid JSON ({exc.msg})") from None


def write_jsonl(path: PathLike, rows: Iterable[Mapping[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=False) + "\n")


def _require_str(row: Mapping[str, Any], key: str, lineno: int, allow_empty: bool = False) -> str:
    if key not in row:
        raise SchemaError(lineno, key, "missing required field")
    value = row[key]
    if not isinstance(value, str) or (not allow_empty and not value.strip()):
        raise SchemaError(lineno, key, "must be a non-empty string")
    return value


def _str_list(row: Mapping[str, Any], key: str, lineno: int) -> tuple[str, ...]:
    value = row[key]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaError(lineno, key, "must be a list of strings")
    return tuple(value)


def instance_from_row(row: Any, lineno: int = 0) -> EvalInstance:
    if not isinstance(row, dict):
        raise SchemaError(lineno, None, "row must be a JSON object")
    iid = _require_str(row, "instance_id", lineno)
    system_id = _require_str(row, "system_id", lineno)
    text = _require_str(row, "document", lineno)
    doc_id = row.get("doc_id") or iid

    if "summary" not in row and "summary_sentences" not in row:
        raise SchemaError(lineno, "summary", "one of 'summary' or 'summary_sentences' is required")
    summary = None
    if "summary" in row:
        summary = _require_str(row, "summary", lineno, allow_empty=True)
    sentences = _str_list(row, "summary_sentences", lineno) if "summary_sentences" in row else None

    keyfacts = None
    if row.get("keyfacts") is not None:
        facts = _str_list(row, "keyfacts", lineno)
        try:
            keyfacts = KeyfactList(iid, facts, KeyfactOrigin.HUMAN)
        except ValueError as exc:
            raise SchemaError(lineno, "keyfacts", str(exc)) from None

    extra = {k: v for k, v in row.items() if k not in _KNOWN_FIELDS}
    return EvalInstance(
        instance_id=iid,
        system_id=system_id,
        document=Document(str(doc_id), text),
        summary=summary,
        summary_sentences=sentences,
        keyfacts=keyfacts,
        extra=extra,
    )


def instance_to_row(instance: EvalInstance) -> dict[str, Any]:
    row: dict[str, Any] = {
        "instance_id": instance.instance_id,
        "system_id": instance.system_id,
        "document": instance.document.text,
    }
    if instance.document.doc_id != instance.instance_id:
        row["doc_id"] = instance.document.doc_id
    if instance.summary is not None:
        row["summary"] = instance.summary
    if instance.summary_sentences is not None:
        row["summary_sentences"] = list(instance.summary_sentences)
    if instance.keyfacts is not None:
        row["keyfacts"] = list(instance.keyfacts.keyfacts)
    row.update(instance.extra)
    return row


def load_instances(path: PathLike) -> list[EvalInstance]:
    instances: list[EvalInstance] = []
    seen: dict[str, int] = {}
    for lineno, row in iter_jsonl(path):
        inst = instance_from_row(row, lineno)
        if inst.instance_id in seen:
            raise SchemaError(
                lineno,
                "instance_id",
                f"duplicate instance_id {inst.instance_id!r} (first seen on line {seen[inst.instance_id]})",
            )
        seen[inst.instance_id] = lineno
        instances.append(inst)
    return instances


def write_instances(path: PathLike, instances: Iterable[EvalInstance]) -> None:
    write_jsonl(path, (instance_to_row(i) for i in instances))


def load_keyfacts(path: PathLike) -> dict[str, KeyfactList]:
    """Read keyfact rows ``{"instance_id", "keyfacts", "origin"?}``."""
    out: dict[str, KeyfactList] = {}
    for lineno, row in iter_jsonl(path):
        if not isinstance(row, dict):
            raise SchemaError(lineno, None, "row must be a JSON object")
        iid = _require_str(row, "instance_id", lineno)
        facts = _str_list(row, "keyfacts", lineno) if "keyfacts" in row else ()
        try:
            origin = KeyfactOrigin(row.get("origin", "human"))
            out[iid] = KeyfactList(iid, facts, origin)
        except ValueError as exc:
            raise SchemaError(lineno, "keyfacts", str(exc)) from None
    return out


# --------------------------------------------------------------------------
# gold labels


def gold_from_row(row: Any, lineno: int = 0) -> GoldAnnotations:
    if not isinstance(row, dict):
        raise SchemaError(lineno, None, "row must be a JSON object")
    iid = _require_str(row, "instance_id", lineno)

    sentence_labels = None
    if row.get("sentence_labels") is not None:
        labels = []
        for item in row["sentence_labels"]:
            if not isinstance(item, dict) or "index" not in item or "has_error" not in item:
                raise SchemaError(lineno, "sentence_labels", "entries need 'index' and 'has_error'")
            category = None
            if item.get("category") is not None:
                category = normalize_category(item["category"])
                if category is None:
                    raise SchemaError(lineno, "sentence_labels", f"unknown category {item['category']!r}")
                if category.has_error != bool(item["has_error"]):
                    raise SchemaError(
                        lineno, "sentence_labels",
                        f"index {item['index']}: has_error contradicts category {category.value!r}",
                    )
            labels.append(GoldSentenceLabel(int(item["index"]), bool(item["has_error"]), category))
        sentence_labels = tuple(sorted(labels, key=lambda lab: lab.index))

    keyfact_labels = None
    if row.get("keyfact_labels") is not None:
        labels_k = []
        for item in row["keyfact_labels"]:
            if not isinstance(item, dict) or "index" not in item or "matched" not in item:
                raise SchemaError(lineno, "keyfact_labels", "entries need 'index' and 'matched'")
            lines = item.get("line_numbers")
            labels_k.append(
                GoldKeyfactLabel(
                    int(item["index"]),
                    bool(item["matched"]),
                    None if lines is None else frozenset(int(x) for x in lines),
                )
            )
        keyfact_labels = tuple(sorted(labels_k, key=lambda lab: lab.index))

    return GoldAnnotations(iid, sentence_labels, keyfact_labels)


def load_gold(path: PathLike) -> dict[str, GoldAnnotations]:
    gold: dict[str, GoldAnnotations] = {}
    seen: dict[str, int] = {}
    for lineno, row in iter_jsonl(path):
        g = gold_from_row(row, lineno)
        if g.instance_id in seen:
            raise SchemaError(
                lineno, "instance_id",
                f"duplicate gold row for {g.instance_id!r} (first seen on line {seen[g.instance_id]})",
            )
        seen[g.instance_id] = lineno
        gold[g.instance_id] = g
    return gold


def gold_to_row(gold: GoldAnnotations) -> dict[str, Any]:
    row: dict[str, Any] = {"instance_id": gold.instance_id}
    if gold.sentence_labels is not None:
        row["sentence_labels"] = [
            {"index": lab.index, "has_error": lab.has_error}
            | ({"category": lab.category.value} if lab.category else {})
            for lab in gold.sentence_labels
        ]
    if gold.keyfact_labels is not None:
        row["keyfact_labels"] = [
            {"index": lab.index, "matched": lab.matched}
            | ({"line_numbers": sorted(lab.line_numbers)} if lab.line_numbers is not None else {})
            for lab in gold.keyfact_labels
        ]
    return row


def check_gold_shape(gold: GoldAnnotations, n: Optional[int], m: Optional[int]) -> list[str]:
    """Return human-readable coverage problems (empty list when consistent)."""
    problems = []
    if gold.sentence_labels is not None and n is not None:
        idx = [lab.index for lab in gold.sentence_labels]
        if idx != list(range(1, n + 1)):
            problems.append(f"gold sentence labels cover {len(idx)} indices {idx}, summary has {n} sentences")
    if gold.keyfact_labels is not None and m is not None:
        idx = [lab.index for lab in gold.keyfact_labels]
        if idx != list(range(1, m + 1)):
            problems.append(f"gold keyfact labels cover {len(idx)} indices {idx}, instance has {m} keyfacts")
    if gold.keyfact_labels is not None and n is not None:
        for lab in gold.keyfact_labels:
            if lab.line_numbers and not all(1 <= s <= n for s in lab.line_numbers):
                problems.append(f"gold keyfact {lab.index} has line numbers outside 1..{n}")
    return problems


def attach_gold(
    instances: Sequence[EvalInstance],
    gold: Union[PathLike, Mapping[str, GoldAnnotations]],
) -> list[EvalInstance]:
    """Join gold annotations onto instances by instance_id.

    Raises JoinError for gold rows naming an unknown instance and ShapeError
    (listing every offending instance) when label counts disagree with N or M.
    """
    gold_map = load_gold(gold) if isinstance(gold, (str, Path)) else dict(gold)
    by_id = {inst.instance_id: inst for inst in instances}
    for iid in gold_map:
        if iid not in by_id:
            raise JoinError(iid, "gold row for unknown instance_id")

    problems: list[tuple[str, str]] = []
    out = []
    for inst in instances:
        g = gold_map.get(inst.instance_id)
        if g is None:
            out.append(inst)
            continue
        n = len(summary_sentences(inst))
        m = inst.keyfacts.m if inst.keyfacts else None
        for msg in check_gold_shape(g, n, m):
            problems.append((inst.instance_id, msg))
        out.append(replace(inst, gold=g))
    if problems:
        raise ShapeError(problems)
    return out


__all__ = [
    "ABBREVIATIONS",
    "DegenerateInputError",
    "ErrorCategory",
    "JoinError",
    "SchemaError",
    "ShapeError",
    "attach_gold",
    "check_gold_shape",
    "gold_from_row",
    "gold_to_row",
    "instance_from_row",
    "instance_to_row",
    "iter_jsonl",
    "load_gold",
    "load_instances",
    "load_keyfacts",
    "segment_sentences",
    "summary_sentences",
    "write_instances",
    "write_jsonl",
]
