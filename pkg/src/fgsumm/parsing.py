"""Extract and validate JSON payloads from raw LLM replies."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Optional, Union

from .model import (
    MAX_MACHINE_KEYFACTS,
    AlignmentEntry,
    AlignmentGraph,
    ErrorCategory,
    FactCheckVerdict,
    KeyfactList,
    KeyfactOrigin,
    normalize_category,
)


class NotJSONError(ValueError):
    pass


class ParseStatus(str, enum.Enum):
    OK = "ok"
    FAILED = "failed"


class FailureReason(str, enum.Enum):
    NOT_JSON = "not_json"
    WRONG_SCHEMA = "wrong_schema"
    INCOMPLETE_COVERAGE = "incomplete_coverage"
    EMPTY_OUTPUT = "empty_output"


class ParseMode(str, enum.Enum):
    STRICT = "strict"
    LENIENT = "lenient"


@dataclass(frozen=True)
class ParseWarning:
    code: str
    message: str


Payload = Union[tuple[FactCheckVerdict, ...], AlignmentGraph, KeyfactList, str]


@dataclass(frozen=True)
class ParseOutcome:
    status: ParseStatus
    failure_reason: Optional[FailureReason] = None
    payload: Optional[Payload] = None
    warnings: tuple[ParseWarning, ...] = ()
    detail: str = ""

    def __post_init__(self) -> None:
        if self.status is ParseStatus.OK and self.payload is None:
            raise ValueError("ok outcome needs a payload")
        if self.status is ParseStatus.FAILED and self.failure_reason is None:
            raise ValueError("failed outcome needs a failure reason")

    @property
    def ok(self) -> bool:
        return self.status is ParseStatus.OK

    @classmethod
    def failed(cls, reason: FailureReason, detail: str = "", warnings: Iterable[ParseWarning] = ()) -> "ParseOutcome":
        return cls(ParseStatus.FAILED, reason, None, tuple(warnings), detail)

    def summary(self) -> dict[str, Any]:
        out: dict[str, Any] = {"status": self.status.value}
        if self.failure_reason is not None:
            out["reason"] = self.failure_reason.value
        if self.detail:
            out["detail"] = self.detail
        if self.warnings:
            out["warnings"] = [{"code": w.code, "message": w.message} for w in self.warnings]
        return out


# --------------------------------------------------------------------------
# JSON extraction

# an opening fence must start a line; the closing one may follow content
_FENCE = re.compile(r"^[ \t]*```[A-Za-z0-9_-]*[ \t]*\r?\n?(.*?)(?:```|\Z)", re.DOTALL | re.MULTILINE)
_OPENERS = {"[": "]", "{": "}"}


def _strip_fences(text: str) -> str:
    if not _FENCE.search(text):
        return text
    return "\n".join(m.group(1) for m in _FENCE.finditer(text))


def _balanced_end(text: str, start: int) -> Optional[int]:
    """Index just past the bracket closing ``text[start]``, or None if unbalanced."""
    stack = [_OPENERS[text[start]]]
    in_string = False
    escaped = False
    for i in range(start + 1, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch in _OPENERS:
            stack.append(_OPENERS[ch])
        elif ch in "]}":
            if ch != stack.pop():
                return None
            if not stack:
                return i + 1
    return None


def extract_json(raw_text: str) -> Union[list, dict]:
    """Return the first balanced JSON array or object found in ``raw_text``.

    Code fences are stripped first. Candidates are tried by increasing start
    offset; the first one that parses wins. Raises NotJSONError otherwise.
    """
    raw_text = raw_text or ""
    stripped = _strip_fences(raw_text)
    for text in (stripped, raw_text) if stripped != raw_text else (raw_text,):
        for start, ch in enumerate(text):
            if ch not in _OPENERS:
                continue
            end = _balanced_end(text, start)
            if end is None:
                continue
            try:
                return json.loads(text[start:end])
            except json.JSONDecodeError:
                continue
    raise NotJSONError("no balanced JSON array or object could be parsed")


# --------------------------------------------------------------------------
# task parsers


def _preamble(raw_text: str) -> Union[ParseOutcome, list, dict]:
    if raw_text is None or not raw_text.strip():
        return ParseOutcome.failed(FailureReason.EMPTY_OUTPUT, "reply is blank")
    try:
        return extract_json(raw_text)
    except NotJSONError as exc:
        return ParseOutcome.failed(FailureReason.NOT_JSON, str(exc))


def _truncated_array(text: str) -> Optional[list]:
    """Complete leading elements of the first array that never closes, if any.

    Replies cut off by a token limit look like ``[{...}, {...}, {"sen``; the
    finished elements are kept so the coverage check can report the gap.
    """
    text = _strip_fences(text)
    for start, ch in enumerate(text):
        if ch != "[" or _balanced_end(text, start) is not None:
            continue
        items = []
        pos = start + 1
        while True:
            while pos < len(text) and text[pos] in " \t\r\n,":
                pos += 1
            if pos >= len(text) or text[pos] not in _OPENERS:
                break
            end = _balanced_end(text, pos)
            if end is None:
                break
            try:
                items.append(json.loads(text[pos:end]))
            except json.JSONDecodeError:
                break
            pos = end
        return items or None
    return None


def _array_preamble(raw_text: str, warnings: list[ParseWarning]) -> Union[ParseOutcome, list, dict]:
    value = _preamble(raw_text)
    failed_json = isinstance(value, ParseOutcome) and value.failure_reason is FailureReason.NOT_JSON
    if failed_json or isinstance(value, dict):
        salvaged = _truncated_array(raw_text)
        if salvaged is not None:
            warnings.append(ParseWarning("truncated_reply", f"array cut off after {len(salvaged)} complete elements"))
            return salvaged
    return value


def _unwrap(value: Any, mode: ParseMode, warnings: list[ParseWarning]) -> Any:
    """Lenient mode accepts ``{"anything": [...]}`` around the expected array."""
    if mode is ParseMode.LENIENT and isinstance(value, dict):
        lists = [v for v in value.values() if isinstance(v, list)]
        if len(lists) == 1:
            warnings.append(ParseWarning("unwrapped", "array was wrapped in an object"))
            return lists[0]
    return value


def _coverage(items: list, expected: int, mode: ParseMode, what: str, warnings: list[ParseWarning]):
    if len(items) < expected:
        return ParseOutcome.failed(
            FailureReason.INCOMPLETE_COVERAGE, f"{len(items)} {what} for {expected} expected", warnings
        )
    if len(items) > expected:
        if mode is ParseMode.STRICT:
            return ParseOutcome.failed(
                FailureReason.INCOMPLETE_COVERAGE, f"{len(items)} {what} for {expected} expected", warnings
            )
        warnings.append(ParseWarning("truncated", f"dropped {len(items) - expected} extra {what}"))
        del items[expected:]
    return None


def parse_fact_check(raw_text: str, expected_count: int, mode: ParseMode = ParseMode.STRICT) -> ParseOutcome:
    """Parse a fact-checking reply into one verdict per sentence.

    Pairing is positional: the i-th array element is sentence i, whatever
    the echoed ``sentence`` text says.
    """
    if expected_count < 1:
        raise ValueError("expected_count must be >= 1")
    mode = ParseMode(mode)
    warnings: list[ParseWarning] = []
    value = _array_preamble(raw_text, warnings)
    if isinstance(value, ParseOutcome):
        return value
    value = _unwrap(value, mode, warnings)
    if not isinstance(value, list):
        return ParseOutcome.failed(FailureReason.WRONG_SCHEMA, "expected a JSON array", warnings)
    items = list(value)
    for pos, item in enumerate(items, start=1):
        if not isinstance(item, dict) or not isinstance(item.get("category"), str):
            return ParseOutcome.failed(
                FailureReason.WRONG_SCHEMA, f"element {pos} lacks a string 'category'", warnings
            )
    failure = _coverage(items, expected_count, mode, "verdicts", warnings)
    if failure:
        return failure

    verdicts = []
    for pos, item in enumerate(items, start=1):
        category = normalize_category(item["category"])
        if category is None:
            if mode is ParseMode.STRICT:
                return ParseOutcome.failed(
                    FailureReason.WRONG_SCHEMA, f"element {pos}: unknown category {item['category']!r}", warnings
                )
            warnings.append(ParseWarning("unknown_category", f"sentence {pos}: {item['category']!r} -> other error"))
            category = ErrorCategory.OTHER
        reason = item.get("reason", "")
        evidence = item.get("evidence")
        verdicts.append(
            FactCheckVerdict(
                pos,
                category,
                reason if isinstance(reason, str) else json.dumps(reason),
                None if evidence is None else (evidence if isinstance(evidence, str) else json.dumps(evidence)),
            )
        )
    return ParseOutcome(ParseStatus.OK, None, tuple(verdicts), tuple(warnings))


_LINE_KEYS = ("line numbers", "line number", "line_numbers", "line_number", "lines")


def _line_numbers(item: dict) -> Optional[list]:
    for key in _LINE_KEYS:
        if key in item:
            value = item[key]
            if value is None:
                return []
            if isinstance(value, (int, str)) and not isinstance(value, bool):
                value = [value]
            if not isinstance(value, list):
                return None
            out = []
            for v in value:
                if isinstance(v, bool):
                    return None
                if isinstance(v, int):
                    out.append(v)
                elif isinstance(v, str) and v.strip().lstrip("[").rstrip("]").strip().isdigit():
                    out.append(int(v.strip().lstrip("[").rstrip("]")))
                elif isinstance(v, float) and v.is_integer():
                    out.append(int(v))
                else:
                    return None
            return out
    return None


def parse_alignment(
    raw_text: str, expected_count: int, n_sentences: int, mode: ParseMode = ParseMode.STRICT
) -> ParseOutcome:
    """Parse a keyfact-alignment reply into an AlignmentGraph.

    Out-of-range line numbers are dropped with a warning; "No" empties the
    line set; "Yes" with no valid lines stays matched.
    """
    if expected_count < 1 or n_sentences < 1:
        raise ValueError("expected_count and n_sentences must be >= 1")
    mode = ParseMode(mode)
    warnings: list[ParseWarning] = []
    value = _array_preamble(raw_text, warnings)
    if isinstance(value, ParseOutcome):
        return value
    value = _unwrap(value, mode, warnings)
    if not isinstance(value, list):
        return ParseOutcome.failed(FailureReason.WRONG_SCHEMA, "expected a JSON array", warnings)
    items = list(value)
    for pos, item in enumerate(items, start=1):
        if not isinstance(item, dict) or not isinstance(item.get("response"), str):
            return ParseOutcome.failed(
                FailureReason.WRONG_SCHEMA, f"element {pos} lacks a string 'response'", warnings
            )
    failure = _coverage(items, expected_count, mode, "keyfacts", warnings)
    if failure:
        return failure

    entries = []
    for pos, item in enumerate(items, start=1):
        response = item["response"].strip().lower().rstrip(".")
        if response not in ("yes", "no"):
            if mode is ParseMode.STRICT:
                return ParseOutcome.failed(
                    FailureReason.WRONG_SCHEMA, f"element {pos}: response {item['response']!r}", warnings
                )
            warnings.append(ParseWarning("unknown_response", f"keyfact {pos}: {item['response']!r} -> No"))
            response = "no"
        lines = _line_numbers(item)
        if lines is None:
            if mode is ParseMode.STRICT:
                return ParseOutcome.failed(
                    FailureReason.WRONG_SCHEMA, f"element {pos}: missing or malformed 'line numbers'", warnings
                )
            warnings.append(ParseWarning("bad_line_numbers", f"keyfact {pos}: line numbers ignored"))
            lines = []
        valid = set()
        for s in lines:
            if 1 <= s <= n_sentences:
                valid.add(s)
            else:
                warnings.append(ParseWarning("line_out_of_range", f"keyfact {pos}: line {s} outside 1..{n_sentences}"))
        if response == "no":
            if valid:
                warnings.append(ParseWarning("lines_on_no", f"keyfact {pos}: lines {sorted(valid)} ignored for 'No'"))
            entries.append(AlignmentEntry(pos, False, frozenset()))
        else:
            entries.append(AlignmentEntry(pos, True, frozenset(valid)))
    return ParseOutcome(ParseStatus.OK, None, AlignmentGraph(tuple(entries)), tuple(warnings))


def parse_keyfacts(raw_text: str, instance_id: str = "") -> ParseOutcome:
    value = _preamble(raw_text)
    if isinstance(value, ParseOutcome):
        return value
    warnings: list[ParseWarning] = []
    if not isinstance(value, dict) or "key facts" not in value:
        return ParseOutcome.failed(FailureReason.WRONG_SCHEMA, "expected an object with 'key facts'")
    facts = value["key facts"]
    if not isinstance(facts, list) or not all(isinstance(f, str) for f in facts):
        return ParseOutcome.failed(FailureReason.WRONG_SCHEMA, "'key facts' must be a list of strings")
    cleaned = [f.strip() for f in facts if f.strip()]
    if len(cleaned) < len(facts):
        warnings.append(ParseWarning("blank_keyfact", f"dropped {len(facts) - len(cleaned)} blank keyfacts"))
    if not cleaned:
        return ParseOutcome.failed(FailureReason.WRONG_SCHEMA, "'key facts' is empty", warnings)
    if len(cleaned) > MAX_MACHINE_KEYFACTS:
        warnings.append(
            ParseWarning("truncated", f"kept the first {MAX_MACHINE_KEYFACTS} of {len(cleaned)} keyfacts")
        )
        cleaned = cleaned[:MAX_MACHINE_KEYFACTS]
    payload = KeyfactList(instance_id, tuple(cleaned), KeyfactOrigin.MACHINE)
    return ParseOutcome(ParseStatus.OK, None, payload, tuple(warnings))


def parse_summary(raw_text: str) -> ParseOutcome:
    if raw_text is None or not raw_text.strip():
        return ParseOutcome.failed(FailureReason.EMPTY_OUTPUT, "reply is blank")
    return ParseOutcome(ParseStatus.OK, None, raw_text.strip())


def success_ratio(outcomes: Iterable[ParseOutcome]) -> Fraction:
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("success_ratio needs at least one outcome")
    return Fraction(sum(1 for o in outcomes if o.ok), len(outcomes))
