"""Render meta-evaluation metrics as JSON, CSV or Markdown.

All three formats take their numbers from the same ``display`` strings, so
renderings of one report never disagree.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Any, Mapping

FORMATS = ("json", "csv", "markdown")


def render_json(report: Mapping[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def render_csv(report: Mapping[str, Any]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["section", "metric", "value"])
    for m in report["metrics"]:
        writer.writerow([m["section"], m["metric"], m["display"]])
    return buf.getvalue()


def render_markdown(report: Mapping[str, Any]) -> str:
    lines: list[str] = ["# Meta-evaluation report", ""]
    sections: dict[str, list] = {}
    for m in report["metrics"]:
        sections.setdefault(m["section"], []).append(m)
    for section, metrics in sections.items():
        lines += [f"## {section}", "", "| metric | value |", "| --- | --- |"]
        lines += [f"| {m['metric']} | {m['display']} |" for m in metrics]
        lines.append("")
    for dim, rows in report.get("system_rankings", {}).items():
        lines += [
            f"## system ranking: {dim}",
            "",
            "| system | predicted mean | gold mean | predicted rank | gold rank |",
            "| --- | --- | --- | --- | --- |",
        ]
        for r in rows:
            lines.append(
                f"| {r['system_id']} | {r['predicted_mean']:.4f} | {r['gold_mean']:.4f} "
                f"| {r['predicted_rank']:g} | {r['gold_rank']:g} |"
            )
        lines.append("")
    if report.get("excluded_instances"):
        lines += ["## excluded instances", "", "| instance | reason |", "| --- | --- |"]
        lines += [f"| {e['instance_id']} | {e['reason']} |" for e in report["excluded_instances"]]
        lines.append("")
    if report.get("notes"):
        lines += ["## notes", ""]
        lines += [f"- {n}" for n in report["notes"]]
        lines.append("")
    return "\n".join(lines)


def render(report: Mapping[str, Any], fmt: str) -> str:
    if fmt == "json":
        return render_json(report)
    if fmt == "csv":
        return render_csv(report)
    if fmt == "markdown":
        return render_markdown(report)
    raise ValueError(f"unknown format {fmt!r}; choose from {FORMATS}")
