"""Synthetic datasets and mock replies shared by the pipeline, cli and acceptance tests."""

import json
import random

from fgsumm.ingest import gold_to_row, instance_to_row
from fgsumm.model import (
    Document,
    ErrorCategory,
    EvalInstance,
    GoldAnnotations,
    GoldKeyfactLabel,
    GoldSentenceLabel,
    KeyfactList,
)

CATEGORIES = [c.value for c in ErrorCategory]

WORKED_DOC = (
    "The city council met on Monday. It approved a new park budget of two million dollars. "
    "The mayor praised the decision."
)
WORKED_SUMMARY = "The council met on Tuesday. It rejected a park budget. The budget is two million dollars."
WORKED_KEYFACTS = (
    "The council met on Monday.",
    "The council voted on a park budget.",
    "The budget is two million dollars.",
    "The mayor praised the decision.",
)


def fact_reply(categories, reasoning=True):
    items = []
    for i, c in enumerate(categories, start=1):
        item = {"sentence": f"sentence {i}"}
        if reasoning:
            item["reason"] = "compared with the document"
        item["category"] = c
        items.append(item)
    return json.dumps(items)


def align_reply(items):
    """items: list of (response, line_numbers)."""
    return json.dumps(
        [{"key fact": f"key fact {k}", "response": r, "line numbers": list(ln)} for k, (r, ln) in enumerate(items, 1)]
    )


def worked_instance():
    return EvalInstance(
        "ex1", "sysA", Document("doc1", WORKED_DOC), summary=WORKED_SUMMARY, keyfacts=KeyfactList("ex1", WORKED_KEYFACTS)
    )


def worked_replay():
    return {
        "ex1:fact_check": "```json\n"
        + fact_reply(["circumstance error", "predicate error", "no error"])
        + "\n```",
        "ex1:keyfact_alignment": "Here you go:\n"
        + align_reply([("Yes", [1]), ("Yes", [1]), ("Yes", [3]), ("No", [])]),
    }


def synthetic_dataset(n_instances=100, seed=0, n_systems=5, broken=()):
    """Instances, replay fixtures and gold labels.

    Predicted labels agree with gold most of the time. Ids in ``broken`` get a
    non-JSON fact-check reply.
    """
    rng = random.Random(seed)
    instances, replay, gold = [], {}, {}
    for i in range(n_instances):
        iid = f"inst{i:03d}"
        system = f"sys{i % n_systems}"
        n = rng.randint(1, 5)
        m = rng.randint(1, 6)
        sentences = tuple(f"Sentence {s} of item {i} says something." for s in range(1, n + 1))
        keyfacts = tuple(f"Fact {k} of item {i}." for k in range(1, m + 1))
        inst = EvalInstance(
            iid,
            system,
            Document(f"doc{i // n_systems}", f"Source document {i // n_systems}. It has words."),
            summary=" ".join(sentences),
            summary_sentences=sentences,
            keyfacts=KeyfactList(iid, keyfacts),
            extra={"reference": f"Reference summary {i}. It covers facts."},
        )
        instances.append(inst)

        # error rate depends on the system so system rankings are meaningful
        err_rate = 0.1 + 0.15 * (i % n_systems)
        gold_cats = [
            rng.choice(CATEGORIES[:8]) if rng.random() < err_rate else "no error" for _ in range(n)
        ]
        pred_cats = [c if rng.random() < 0.8 else rng.choice(CATEGORIES) for c in gold_cats]
        gold_match = [rng.random() < 0.9 - 0.1 * (i % n_systems) for _ in range(m)]
        gold_lines = [sorted({rng.randint(1, n)}) if g else [] for g in gold_match]
        pred_match = [g if rng.random() < 0.85 else not g for g in gold_match]
        pred_items = [("Yes", gl or [1]) if p else ("No", []) for p, gl in zip(pred_match, gold_lines)]

        replay[f"{iid}:fact_check"] = "not json at all" if iid in broken else fact_reply(pred_cats)
        replay[f"{iid}:keyfact_alignment"] = align_reply(pred_items)
        gold[iid] = GoldAnnotations(
            iid,
            tuple(
                GoldSentenceLabel(s, c != "no error", ErrorCategory(c)) for s, c in enumerate(gold_cats, start=1)
            ),
            tuple(
                GoldKeyfactLabel(k, g, frozenset(ln)) for k, (g, ln) in enumerate(zip(gold_match, gold_lines), start=1)
            ),
        )
    return instances, replay, gold


def write_dataset(tmp_path, instances, replay, gold=None):
    inp = tmp_path / "instances.jsonl"
    inp.write_text("".join(json.dumps(instance_to_row(i)) + "\n" for i in instances), encoding="utf-8")
    rp = tmp_path / "replay.json"
    rp.write_text(json.dumps(replay), encoding="utf-8")
    gp = None
    if gold is not None:
        gp = tmp_path / "gold.jsonl"
        gp.write_text("".join(json.dumps(gold_to_row(g)) + "\n" for g in gold.values()), encoding="utf-8")
    return inp, rp, gp
