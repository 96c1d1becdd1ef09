"""Command line entry point: eval, benchmark, extract-keyfacts, summarize, report."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .benchmark import LEVELS, build_meta_report, stability_report
from .gateway import API_KEY_ENV, BackendConfig, BackendKind, Gateway, GatewayConfigError
from .ingest import (
    JoinError,
    SchemaError,
    ShapeError,
    iter_jsonl,
    load_gold,
    load_instances,
    load_keyfacts,
    write_jsonl,
)
from .model import Document
from .parsing import ParseMode
from .pipeline import (
    KeyfactSource,
    RunConfig,
    RunConfigError,
    load_results,
    run_evaluation,
    run_keyfact_extraction,
    run_summarize,
)
from .prompts import DEFAULT_ALIGNMENT, DEFAULT_FACT_CHECK, PromptVariant, Task, VariantMismatch, template_versions
from .report import FORMATS, render
from .scoring import ALIGNMENT, FACT_CHECK

log = logging.getLogger("fgsumm")

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2

TASK_CHOICES = {"fact-check": {FACT_CHECK}, "alignment": {ALIGNMENT}, "both": {FACT_CHECK, ALIGNMENT}}


class CommandError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("backend")
    g.add_argument("--backend", choices=["openai", "mock"], default="mock")
    g.add_argument("--model", default=None, help="model name (required for --backend openai)")
    g.add_argument("--endpoint", default="", help="OpenAI-compatible base URL, e.g. https://host/v1")
    g.add_argument("--replay", type=Path, default=None, help="mock backend fixtures (JSON object)")
    g.add_argument("--temperature", type=float, default=0.0)
    g.add_argument("--max-tokens", type=int, default=2048)
    g.add_argument("--timeout", type=float, default=120.0)
    g.add_argument("--retries", type=int, default=3)
    g.add_argument("--parallelism", type=int, default=1)
    g.add_argument("--cache-dir", type=Path, default=None)
    g.add_argument("--seed", type=int, default=0, help="recorded in the run summary")


def _backend(args: argparse.Namespace) -> BackendConfig:
    if args.backend == "openai":
        if not args.model:
            raise CommandError("--model is required with --backend openai")
        if not args.endpoint:
            raise CommandError("--endpoint is required with --backend openai")
        kind = BackendKind.OPENAI_COMPATIBLE_HTTP
    else:
        kind = BackendKind.MOCK_REPLAY
    return BackendConfig(
        kind=kind,
        endpoint_url=args.endpoint,
        model_name=args.model or "mock",
        temperature=args.temperature,
        max_output_tokens=args.max_tokens,
        request_timeout=args.timeout,
        max_retries=args.retries,
        parallelism=args.parallelism,
        cache_dir=args.cache_dir,
        replay_path=args.replay,
    )


def _summary_path(out: Path) -> Path:
    return out.with_name(out.stem + ".summary.json")


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _parse_variant(task: Task, spec: Optional[str], default: PromptVariant) -> PromptVariant:
    if spec is None:
        return default
    try:
        return PromptVariant.parse(task, spec)
    except (ValueError, VariantMismatch) as exc:
        raise CommandError(f"bad variant {spec!r}: {exc}") from None


# --------------------------------------------------------------------------
# commands


def cmd_eval(args: argparse.Namespace) -> int:
    backend = _backend(args)
    instances = load_instances(args.input)
    if args.keyfacts:
        provided = load_keyfacts(args.keyfacts)
        instances = [
            dataclasses.replace(i, keyfacts=provided[i.instance_id]) if i.instance_id in provided else i
            for i in instances
        ]
    source = KeyfactSource.EXTRACT_FROM_REFERENCE if args.extract_keyfacts else KeyfactSource.PROVIDED
    config = RunConfig(
        task_set=TASK_CHOICES[args.tasks],
        fact_check_variant=_parse_variant(Task.FACT_CHECK, args.fact_check_variant, DEFAULT_FACT_CHECK),
        alignment_variant=_parse_variant(Task.KEYFACT_ALIGNMENT, args.alignment_variant, DEFAULT_ALIGNMENT),
        backend=backend,
        parse_mode=ParseMode(args.mode),
        keyfact_source=source,
        reference_field=args.reference_field,
        keyfact_cache_path=args.keyfact_cache,
        include_raw=not args.no_raw,
    )
    config.validate_for(instances)
    run = run_evaluation(instances, config, Gateway(backend))
    write_jsonl(args.out, run.rows(config.include_raw))
    summary = dict(run.summary, seed=args.seed, input=str(args.input))
    _write_json(_summary_path(args.out), summary)
    ratios = ", ".join(f"{t}={r['ok']}/{r['total']}" for t, r in summary["success_ratio"].items())
    print(f"wrote {len(run.scored)} results to {args.out} (parsed ok: {ratios or 'n/a'})")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    levels = [lv.strip() for lv in args.levels.split(",") if lv.strip()]
    bad = sorted(set(levels) - set(LEVELS))
    if bad:
        raise CommandError(f"unknown level(s) {bad}; choose from {','.join(LEVELS)}")
    if args.permutations < 100:
        raise CommandError("--permutations must be at least 100")
    pred = load_results(args.pred)
    gold = load_gold(args.gold)
    report = build_meta_report(
        pred, gold, levels, permutations=args.permutations, seed=args.seed, include_failures=args.include_failures
    )
    data = report.to_json()
    data["config"] = {
        "pred": str(args.pred),
        "gold": str(args.gold),
        "permutations": args.permutations,
        "seed": args.seed,
        "tool_version": __version__,
    }
    if args.runs:
        runs = [{s.instance_id: s.scores for s in pred}]
        runs += [{s.instance_id: s.scores for s in load_results(p)} for p in args.runs]
        try:
            stab = stability_report(runs)
        except ValueError as exc:
            raise CommandError(f"stability: {exc}") from None
        for dim, res in stab.items():
            alpha = res["alpha"]
            data["metrics"].append(
                {
                    "section": "stability",
                    "metric": f"{dim}.alpha",
                    "kind": "score",
                    "value": None if alpha is None else float(alpha),
                    "exact": None if alpha is None else f"{alpha.numerator}/{alpha.denominator}",
                    "display": "n/a" if alpha is None else f"{float(alpha):.4f}",
                }
            )
            delta = res["max_delta"]
            data["metrics"].append(
                {
                    "section": "stability",
                    "metric": f"{dim}.max_delta",
                    "kind": "score",
                    "value": float(delta),
                    "exact": f"{delta.numerator}/{delta.denominator}",
                    "display": f"{float(delta):.4f}",
                }
            )
    text = render(data, args.format)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text, encoding="utf-8")
        print(f"wrote {args.format} report to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_extract_keyfacts(args: argparse.Namespace) -> int:
    backend = _backend(args)
    instances = load_instances(args.input)
    config = RunConfig(
        task_set={ALIGNMENT},
        backend=backend,
        keyfact_source=KeyfactSource.EXTRACT_FROM_REFERENCE,
        reference_field=args.reference_field,
    )
    config.validate_for(instances)
    run = run_keyfact_extraction(instances, config, Gateway(backend))
    write_jsonl(args.out, run.rows)
    summary = {
        "tool_version": __version__,
        "config": {"reference_field": args.reference_field, "backend": backend.describe()},
        "template_versions": template_versions(),
        "seed": args.seed,
        "errors": run.errors,
        **run.summary(),
    }
    _write_json(_summary_path(args.out), summary)
    print(f"wrote keyfacts for {len(run.rows)} instance(s) to {args.out}; {len(run.errors)} error(s)")
    return EXIT_OK


def _load_documents(path: Path) -> list[Document]:
    docs: dict[str, Document] = {}
    for lineno, row in iter_jsonl(path):
        if not isinstance(row, dict) or not isinstance(row.get("document"), str) or not row["document"].strip():
            raise SchemaError(lineno, "document", "must be a non-empty string")
        doc_id = row.get("doc_id") or row.get("instance_id")
        if not isinstance(doc_id, str) or not doc_id:
            raise SchemaError(lineno, "doc_id", "one of 'doc_id' or 'instance_id' is required")
        docs.setdefault(doc_id, Document(doc_id, row["document"]))
    return list(docs.values())


def cmd_summarize(args: argparse.Namespace) -> int:
    backend = _backend(args)
    documents = _load_documents(args.input)
    config = RunConfig(backend=backend)
    run = run_summarize(documents, config, Gateway(backend))
    write_jsonl(args.out, run.rows)
    summary = {
        "tool_version": __version__,
        "config": {"backend": backend.describe()},
        "template_versions": template_versions(),
        "seed": args.seed,
        "documents": len(documents),
        "summaries": len(run.rows),
        "errors": run.errors,
    }
    _write_json(_summary_path(args.out), summary)
    print(f"wrote {len(run.rows)} summaries to {args.out}; {len(run.errors)} error(s)")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    data = json.loads(Path(args.input).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or "metrics" not in data:
        raise CommandError(f"{args.input} is not a JSON benchmark report")
    text = render(data, args.format)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgsumm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="score summaries with an LLM evaluator")
    p.add_argument("--input", type=Path, required=True, help="instances JSONL")
    p.add_argument("--out", type=Path, required=True, help="results JSONL")
    p.add_argument("--tasks", choices=sorted(TASK_CHOICES), default="both")
    p.add_argument("--keyfacts", type=Path, default=None, help="keyfacts JSONL (instance_id, keyfacts)")
    p.add_argument("--extract-keyfacts", action="store_true", help="extract keyfacts from the reference field")
    p.add_argument("--keyfact-cache", type=Path, default=None, help="JSONL cache for extracted keyfacts")
    p.add_argument("--reference-field", default="reference")
    p.add_argument("--mode", choices=[m.value for m in ParseMode], default="strict")
    p.add_argument("--fact-check-variant", default=None, help="e.g. instruction+categorization or basic")
    p.add_argument("--alignment-variant", default=None, help="e.g. instruction+reasoning or basic")
    p.add_argument("--no-raw", action="store_true", help="omit raw replies from the results")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark", help="agreement of predictions with human labels")
    p.add_argument("--pred", type=Path, required=True, help="results JSONL from eval")
    p.add_argument("--gold", type=Path, required=True, help="gold annotations JSONL")
    p.add_argument("--levels", default=",".join(LEVELS))
    p.add_argument("--permutations", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=FORMATS, default="json")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--include-failures", action="store_true", help="keep parse failures with default scores")
    p.add_argument("--runs", type=Path, nargs="*", default=[], help="more results files for inter-run stability")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("extract-keyfacts", help="extract keyfacts from reference summaries")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--reference-field", default="reference")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_extract_keyfacts)

    p = sub.add_parser("summarize", help="generate summaries for documents")
    p.add_argument("--input", type=Path, required=True, help="JSONL with doc_id/instance_id and document")
    p.add_argument("--out", type=Path, required=True)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("report", help="re-render a JSON benchmark report")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--format", choices=FORMATS, default="markdown")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CommandError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (RunConfigError, GatewayConfigError, ValueError) as exc:
        if isinstance(exc, (SchemaError, ShapeError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        msg = str(exc)
        if isinstance(exc, GatewayConfigError) and API_KEY_ENV not in msg and "HTTP 401" in msg:
            msg += f" (check {API_KEY_ENV})"
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (JoinError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
