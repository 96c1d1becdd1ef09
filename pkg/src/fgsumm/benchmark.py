"""Meta-evaluation: agreement of predicted scores and labels with human annotations."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .ingest import JoinError, ShapeError, check_gold_shape
from .model import DIMENSIONS, LOCALIZATION_CATEGORIES, GoldAnnotations, ScoreTriple
from .parsing import success_ratio
from .scoring import TASKS, ScoredInstance
from .stats import (
    BalancedAccuracy,
    LocalizationReport,
    StatisticError,
    SystemRankCorrelation,
    balanced_accuracy,
    cohen_kappa,
    error_localization_accuracy,
    krippendorff_alpha_interval,
    krippendorff_alpha_nominal,
    pearson,
    permutation_p_value,
    spearman,
    system_rank_correlation,
)

LEVELS = ("sentence", "summary", "system", "localization", "agreement")

Number = Union[Fraction, float, int]


@dataclass(frozen=True)
class Metric:
    section: str
    name: str
    value: Optional[Number]
    kind: str  # score | ratio | count | p

    def display(self) -> str:
        if self.value is None:
            return "n/a"
        if self.kind == "count":
            return str(int(self.value))
        if self.kind == "ratio":
            return f"{float(self.value) * 100:.1f}%"
        return f"{float(self.value):.4f}"

    def exact(self) -> Optional[str]:
        if isinstance(self.value, Fraction):
            return f"{self.value.numerator}/{self.value.denominator}"
        return None


@dataclass
class MetaReport:
    levels: tuple[str, ...]
    sentence_level: Optional[BalancedAccuracy] = None
    sentence_pairs: int = 0
    summary_level: dict[str, dict[str, Any]] = field(default_factory=dict)
    system_level: dict[str, Optional[SystemRankCorrelation]] = field(default_factory=dict)
    error_localization: Optional[LocalizationReport] = None
    agreement: dict[str, Optional[Fraction]] = field(default_factory=dict)
    success_ratio: dict[str, Fraction] = field(default_factory=dict)
    included_instances: list[str] = field(default_factory=list)
    excluded_instances: list[dict[str, str]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    include_failures: bool = False

    def metrics(self) -> list[Metric]:
        out: list[Metric] = []
        for task in TASKS:
            if task in self.success_ratio:
                out.append(Metric("run", f"success_ratio.{task}", self.success_ratio[task], "ratio"))
        out.append(Metric("run", "included_instances", len(self.included_instances), "count"))
        out.append(Metric("run", "excluded_instances", len(self.excluded_instances), "count"))
        if "sentence" in self.levels:
            ba = self.sentence_level
            out.append(Metric("sentence", "bacc", ba.value if ba else None, "ratio"))
            out.append(Metric("sentence", "sensitivity", ba.counts.sensitivity if ba else None, "ratio"))
            out.append(Metric("sentence", "specificity", ba.counts.specificity if ba else None, "ratio"))
            out.append(Metric("sentence", "n_sentences", self.sentence_pairs, "count"))
        if "summary" in self.levels:
            for dim in DIMENSIONS:
                res = self.summary_level.get(dim)
                if res is None:
                    continue
                out.append(Metric("summary", f"{dim}.pearson", res.get("pearson"), "score"))
                out.append(Metric("summary", f"{dim}.pearson_p", res.get("pearson_p"), "p"))
                out.append(Metric("summary", f"{dim}.spearman", res.get("spearman"), "score"))
                out.append(Metric("summary", f"{dim}.spearman_p", res.get("spearman_p"), "p"))
                out.append(Metric("summary", f"{dim}.n", res.get("n"), "count"))
        if "system" in self.levels:
            for dim, res in self.system_level.items():
                out.append(Metric("system", f"{dim}.rank_corr", res.coefficient if res else None, "score"))
                out.append(Metric("system", f"{dim}.n_systems", len(res.rows) if res else 0, "count"))
        if "localization" in self.levels:
            loc = self.error_localization
            for cat in LOCALIZATION_CATEGORIES:
                out.append(Metric("localization", cat.code, loc.per_category[cat] if loc else None, "ratio"))
            out.append(Metric("localization", "mean", loc.mean if loc else None, "ratio"))
        if "agreement" in self.levels:
            for name, value in self.agreement.items():
                out.append(Metric("agreement", name, value, "score"))
        return out

    def to_json(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "levels": list(self.levels),
            "strict": not self.include_failures,
            "metrics": [
                {
                    "section": m.section,
                    "metric": m.name,
                    "kind": m.kind,
                    "value": None if m.value is None else (int(m.value) if m.kind == "count" else float(m.value)),
                    "exact": m.exact(),
                    "display": m.display(),
                }
                for m in self.metrics()
            ],
            "excluded_instances": self.excluded_instances,
            "notes": self.notes,
        }
        if self.sentence_level is not None:
            c = self.sentence_level.counts
            data["sentence_counts"] = {
                "true_positives": c.true_positives,
                "false_negatives": c.false_negatives,
                "true_negatives": c.true_negatives,
                "false_positives": c.false_positives,
            }
        rankings = {}
        for dim, res in self.system_level.items():
            if res is None:
                continue
            rankings[dim] = [
                {
                    "system_id": r.system_id,
                    "predicted_mean": float(r.predicted_mean),
                    "gold_mean": float(r.gold_mean),
                    "predicted_rank": r.predicted_rank,
                    "gold_rank": r.gold_rank,
                }
                for r in res.rows
            ]
        if rankings:
            data["system_rankings"] = rankings
        if self.error_localization is not None:
            data["confusion_matrix"] = {
                g.code: {p.code: n for p, n in row.items()} for g, row in self.error_localization.confusion.items()
            }
        return data


def stability_report(runs: Sequence[Mapping[str, ScoreTriple]]) -> dict[str, dict[str, Any]]:
    """Inter-run agreement per dimension, treating each run as a rater over instances.

    Uses Krippendorff's alpha with the interval (squared difference) metric.
    """
    if len(runs) < 2:
        raise ValueError("stability needs at least two runs")
    ids = sorted(runs[0])
    for k, run in enumerate(runs[1:], start=2):
        if set(run) != set(ids):
            raise ValueError(f"run {k} covers a different instance set than run 1")
    out: dict[str, dict[str, Any]] = {}
    for dim in DIMENSIONS:
        matrix = [[run[i].get(dim) for i in ids] for run in runs]
        if all(v is None for row in matrix for v in row):
            continue
        max_delta = Fraction(0)
        for j in range(len(ids)):
            col = [row[j] for row in matrix if row[j] is not None]
            if len(col) >= 2:
                max_delta = max(max_delta, max(col) - min(col))
        try:
            alpha: Optional[Fraction] = krippendorff_alpha_interval(matrix)
        except StatisticError:
            alpha = None
        out[dim] = {"alpha": alpha, "max_delta": max_delta, "n_items": len(ids)}
    return out


def _correlations(pred: list, gold: list, permutations: int, seed: int, notes: list, label: str) -> dict[str, Any]:
    res: dict[str, Any] = {"n": len(pred)}
    for name, fn in (("pearson", pearson), ("spearman", spearman)):
        try:
            res[name] = fn(pred, gold)
            res[f"{name}_p"] = permutation_p_value(pred, gold, name, permutations, seed)
        except StatisticError as exc:
            res[name] = res[f"{name}_p"] = None
            notes.append(f"{label} {name}: {exc}")
    return res


def build_meta_report(
    scored: Sequence[ScoredInstance],
    gold: Mapping[str, GoldAnnotations],
    levels: Iterable[str] = LEVELS,
    permutations: int = 10_000,
    seed: int = 0,
    include_failures: bool = False,
) -> MetaReport:
    """Join predictions with gold labels and compute the requested statistics.

    Strict inclusion (the default) drops every instance with a failed parse;
    ``include_failures`` keeps them with their failure-default scores for the
    summary- and system-level statistics.
    """
    requested = set(levels)
    unknown = requested - set(LEVELS)
    if unknown:
        raise ValueError(f"unknown levels: {sorted(unknown)}")
    levels = tuple(lv for lv in LEVELS if lv in requested)
    report = MetaReport(levels=levels, include_failures=include_failures)

    by_id = {s.instance_id: s for s in scored}
    for iid in gold:
        if iid not in by_id:
            raise JoinError(iid, "gold row has no matching prediction")

    for task in TASKS:
        outcomes = [s.parse_outcomes[task] for s in scored if task in s.parse_outcomes]
        if outcomes:
            report.success_ratio[task] = success_ratio(outcomes)

    problems = []
    for s in scored:
        g = gold.get(s.instance_id)
        if g is not None:
            problems += [(s.instance_id, p) for p in check_gold_shape(g, s.n_sentences or None, s.n_keyfacts)]
    if problems:
        raise ShapeError(problems)

    included: list[ScoredInstance] = []
    for s in scored:
        if s.instance_id not in gold:
            report.excluded_instances.append({"instance_id": s.instance_id, "reason": "no gold annotations"})
            continue
        failed = {t: o.failure_reason.value for t, o in s.parse_outcomes.items() if not o.ok}
        if failed and not include_failures:
            reason = ", ".join(f"{t}={r}" for t, r in failed.items())
            report.excluded_instances.append({"instance_id": s.instance_id, "reason": f"parse failed ({reason})"})
            continue
        included.append(s)
    report.included_instances = [s.instance_id for s in included]

    # sentence level + localization use per-sentence labels
    pred_bin, gold_bin, pred_cat, gold_cat = [], [], [], []
    for s in included:
        g = gold[s.instance_id]
        if s.verdicts is None or not g.sentence_labels:
            continue
        for v, lab in zip(s.verdicts, g.sentence_labels):
            pred_bin.append(v.has_error)
            gold_bin.append(lab.has_error)
            if lab.category is not None:
                pred_cat.append(v.category)
                gold_cat.append(lab.category)
    report.sentence_pairs = len(pred_bin)

    if "sentence" in levels:
        if pred_bin:
            try:
                report.sentence_level = balanced_accuracy(pred_bin, gold_bin)
            except StatisticError as exc:
                report.notes.append(f"sentence bAcc: {exc}")
        else:
            report.notes.append("sentence bAcc: no sentence-level gold labels")

    if "localization" in levels:
        if gold_cat:
            report.error_localization = error_localization_accuracy(pred_cat, gold_cat)
        else:
            report.notes.append("localization: no gold error categories")

    # summary and system level use per-instance scores
    pairs: dict[str, list[tuple[ScoredInstance, Fraction, Fraction]]] = defaultdict(list)
    for s in included:
        g = gold[s.instance_id]
        gold_scores = g.scores(s.n_sentences or None)
        for dim in DIMENSIONS:
            p, h = s.scores.get(dim), gold_scores.get(dim)
            if p is not None and h is not None:
                pairs[dim].append((s, p, h))

    if "summary" in levels:
        for dim in DIMENSIONS:
            if not pairs[dim]:
                continue
            pred = [p for _, p, _ in pairs[dim]]
            hum = [h for _, _, h in pairs[dim]]
            report.summary_level[dim] = _correlations(pred, hum, permutations, seed, report.notes, f"summary {dim}")

    if "system" in levels:
        for dim in DIMENSIONS:
            if not pairs[dim]:
                continue
            by_sys_p: dict[str, list] = defaultdict(list)
            by_sys_g: dict[str, list] = defaultdict(list)
            for s, p, h in pairs[dim]:
                by_sys_p[s.system_id].append(p)
                by_sys_g[s.system_id].append(h)
            try:
                report.system_level[dim] = system_rank_correlation(by_sys_p, by_sys_g)
            except StatisticError as exc:
                report.system_level[dim] = None
                report.notes.append(f"system {dim}: {exc}")

    if "agreement" in levels:
        if pred_bin:
            try:
                report.agreement["sentence_error.cohen_kappa"] = cohen_kappa(pred_bin, gold_bin)
            except StatisticError as exc:
                report.notes.append(f"sentence kappa: {exc}")
        pm, gm = [], []
        for s in included:
            g = gold[s.instance_id]
            if s.alignment is None or not g.keyfact_labels:
                continue
            for e, lab in zip(s.alignment.entries, g.keyfact_labels):
                pm.append(e.matched)
                gm.append(lab.matched)
        if pm:
            try:
                report.agreement["keyfact_matching.krippendorff_alpha"] = krippendorff_alpha_nominal([pm, gm])
            except StatisticError as exc:
                report.notes.append(f"keyfact alpha: {exc}")
    return report
