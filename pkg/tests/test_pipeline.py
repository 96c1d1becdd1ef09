import json
from fractions import Fraction

import pytest

from fgsumm.gateway import BackendConfig, Gateway
from fgsumm.model import Document, EvalInstance, KeyfactList, Provenance
from fgsumm.parsing import ParseMode, success_ratio
from fgsumm.pipeline import (
    KeyfactSource,
    RunConfig,
    RunConfigError,
    load_results,
    run_evaluation,
    run_keyfact_extraction,
    run_summarize,
    scored_from_row,
    scored_to_row,
)
from fgsumm.prompts import render_summarize
from fgsumm.scoring import ALIGNMENT, FACT_CHECK, completeness, conciseness, faithfulness
from fgsumm.ingest import write_jsonl

from helpers import worked_instance, worked_replay, synthetic_dataset


def _gw(replay, **kw):
    return Gateway(BackendConfig(max_retries=0, **kw), replay=replay)


def test_worked_example_end_to_end():
    run = run_evaluation([worked_instance()], RunConfig(), _gw(worked_replay()))
    s = run.scored[0].scores
    assert (s.faithfulness, s.completeness, s.conciseness) == (Fraction(1, 3), Fraction(3, 4), Fraction(2, 3))
    assert run.summary["success_ratio"][FACT_CHECK]["exact"] == "1/1"


def test_non_json_reply_gives_default():
    replay = worked_replay()
    replay["ex1:keyfact_alignment"] = "Sorry, I can't do that."
    run = run_evaluation([worked_instance()], RunConfig(), _gw(replay))
    sc = run.scored[0]
    assert sc.scores.provenance is Provenance.FAILURE_DEFAULT
    assert (sc.scores.faithfulness, sc.scores.completeness, sc.scores.conciseness) == (1, 0, 0)
    assert run.summary["success_ratio"][ALIGNMENT]["ok"] == 0
    assert run.summary["failure_reasons"] == {"not_json": 1}


def test_transport_error_is_recorded_not_raised():
    replay = worked_replay()
    del replay["ex1:fact_check"]
    run = run_evaluation([worked_instance()], RunConfig(), _gw(replay))
    outcome = run.scored[0].parse_outcomes[FACT_CHECK]
    assert outcome.failure_reason.value == "empty_output"
    assert outcome.warnings[0].code == "transport_error"


def test_task_subset():
    run = run_evaluation([worked_instance()], RunConfig(task_set={FACT_CHECK}), _gw(worked_replay()))
    s = run.scored[0].scores
    assert s.faithfulness == Fraction(1, 3) and s.completeness is None
    assert set(run.scored[0].parse_outcomes) == {FACT_CHECK}


def test_alignment_without_keyfacts_is_config_error():
    inst = EvalInstance("x", "s", Document("d", "Doc."), summary="One. Two.")
    with pytest.raises(RunConfigError, match="keyfacts"):
        run_evaluation([inst], RunConfig(task_set={ALIGNMENT}), _gw({}))
    with pytest.raises(RunConfigError, match="reference"):
        run_evaluation(
            [inst], RunConfig(keyfact_source=KeyfactSource.EXTRACT_FROM_REFERENCE), _gw({})
        )


def test_empty_summary_instance():
    inst = EvalInstance("e", "s", Document("d", "Doc."), summary="  ", keyfacts=KeyfactList("e", ("k",)))
    run = run_evaluation([inst], RunConfig(), _gw({}))
    sc = run.scored[0]
    assert sc.n_sentences == 0 and sc.scores.provenance is Provenance.FAILURE_DEFAULT
    assert run.summary["counts"]["degenerate"] == 1


def test_results_self_consistent_and_round_trip(tmp_path):
    instances, replay, _ = synthetic_dataset(30, seed=1, broken={"inst004"})
    run = run_evaluation(instances, RunConfig(), _gw(replay))
    write_jsonl(tmp_path / "r.jsonl", run.rows())
    back = load_results(tmp_path / "r.jsonl")
    for orig, row, re_read in zip(run.scored, run.rows(), back):
        assert re_read.scores == orig.scores
        assert re_read.parse_ok == orig.parse_ok
        if orig.parse_ok:
            assert faithfulness(re_read.verdicts, row["num_sentences"]) == orig.scores.faithfulness
            assert completeness(re_read.alignment, row["num_keyfacts"]) == orig.scores.completeness
            assert conciseness(re_read.alignment, row["num_sentences"]) == orig.scores.conciseness
        assert scored_to_row(scored_from_row(row)) == row
    for task in (FACT_CHECK, ALIGNMENT):
        want = success_ratio(s.parse_outcomes[task] for s in run.scored)
        assert run.summary["success_ratio"][task]["exact"] == f"{want.numerator}/{want.denominator}"


def test_cache_makes_rerun_identical(tmp_path):
    instances, replay, _ = synthetic_dataset(10, seed=2)
    cfg = RunConfig(backend=BackendConfig(cache_dir=tmp_path / "cache"))
    first = run_evaluation(instances, cfg, Gateway(cfg.backend, replay=replay))
    # second run has no fixtures at all and must be served from the cache
    second = run_evaluation(instances, cfg, Gateway(cfg.backend, replay={}))
    assert json.dumps(first.rows()) == json.dumps(second.rows())


def test_lenient_mode_recovers_unknown_category():
    replay = worked_replay()
    replay["ex1:fact_check"] = replay["ex1:fact_check"].replace("predicate error", "banana")
    strict = run_evaluation([worked_instance()], RunConfig(), _gw(replay))
    lenient = run_evaluation([worked_instance()], RunConfig(parse_mode=ParseMode.LENIENT), _gw(replay))
    assert strict.scored[0].scores.provenance is Provenance.FAILURE_DEFAULT
    assert lenient.scored[0].scores.faithfulness == Fraction(1, 3)


# -- keyfact extraction ------------------------------------------------------------


def _ref_instance(iid, ref="The council approved a budget. The mayor spoke."):
    return EvalInstance(iid, "s", Document("d", "Doc text."), summary="One. Two.", extra={"reference": ref})


def test_extraction_counts_and_cap():
    insts = [_ref_instance("a"), _ref_instance("b"), EvalInstance("c", "s", Document("d", "x"), summary="x.")]
    replay = {
        "a:keyfact_extraction": json.dumps({"key facts": [f"f{i}" for i in range(5)]}),
        "b:keyfact_extraction": json.dumps({"key facts": [f"f{i}" for i in range(20)]}),
    }
    run = run_keyfact_extraction(insts, RunConfig(), _gw(replay))
    rows = {r["instance_id"]: r for r in run.rows}
    assert len(rows["a"]["keyfacts"]) == 5
    assert len(rows["b"]["keyfacts"]) == 16 and rows["b"]["warnings"]
    assert "c" not in rows and run.errors[0]["instance_id"] == "c"


def test_evaluation_with_extracted_keyfacts(tmp_path):
    inst = _ref_instance("a")
    replay = {
        "a:keyfact_extraction": json.dumps({"key facts": ["The council approved a budget.", "The mayor spoke."]}),
        "a:fact_check": json.dumps([{"category": "no error"}, {"category": "no error"}]),
        "a:keyfact_alignment": json.dumps(
            [{"response": "Yes", "line numbers": [1]}, {"response": "No", "line numbers": []}]
        ),
    }
    cache = tmp_path / "kf.jsonl"
    cfg = RunConfig(keyfact_source=KeyfactSource.EXTRACT_FROM_REFERENCE, keyfact_cache_path=cache)
    run = run_evaluation([inst], cfg, _gw(replay))
    assert run.scored[0].scores.completeness == Fraction(1, 2)
    assert cache.exists()
    # extraction is not repeated once cached
    del replay["a:keyfact_extraction"]
    again = run_evaluation([inst], cfg, _gw(replay))
    assert again.scored[0].scores == run.scored[0].scores


def test_failed_extraction_fails_alignment():
    inst = _ref_instance("a")
    replay = {"a:keyfact_extraction": "nope", "a:fact_check": json.dumps([{"category": "no error"}] * 2)}
    cfg = RunConfig(keyfact_source=KeyfactSource.EXTRACT_FROM_REFERENCE)
    run = run_evaluation([inst], cfg, _gw(replay))
    assert run.scored[0].parse_outcomes[ALIGNMENT].failure_reason.value == "not_json"
    assert run.scored[0].scores.provenance is Provenance.FAILURE_DEFAULT


# -- summarization ---------------------------------------------------------------------


def test_summarize_rows_and_errors():
    docs = [Document("d1", "First doc."), Document("d2", "Second doc.")]
    replay = {render_summarize("First doc.").sha256: "Summary one.", "d2:summarize": "Summary two."}
    cfg = RunConfig(backend=BackendConfig(model_name="gen-model"))
    run = run_summarize(docs, cfg, Gateway(cfg.backend, replay=replay))
    assert [r["summary"] for r in run.rows] == ["Summary one.", "Summary two."]
    assert {r["system_id"] for r in run.rows} == {"gen-model"}
    assert run.rows[0]["instance_id"] == "d1::gen-model"
    partial = run_summarize(docs, cfg, Gateway(BackendConfig(model_name="gen-model", max_retries=0), replay={"d2:summarize": "S."}))
    assert len(partial.rows) == 1 and partial.errors[0]["doc_id"] == "d1"
    with pytest.raises(ValueError):
        run_summarize([], cfg)
