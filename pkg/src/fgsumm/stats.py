"""Agreement statistics between predicted and human judgments.

Counts-based statistics (balanced accuracy, kappa, alpha, localization
accuracy) return exact ``Fraction`` values; correlations return floats.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Callable, Hashable, Mapping, Optional, Sequence

import numpy as np

from .model import LOCALIZATION_CATEGORIES, ErrorCategory


class StatisticError(ValueError):
    """A statistic is undefined for the given data (reported, never silently skipped)."""


class DegenerateGoldError(StatisticError):
    pass


class ZeroVarianceError(StatisticError):
    pass


# --------------------------------------------------------------------------
# sentence level


@dataclass(frozen=True)
class BinaryClassificationCounts:
    true_positives: int
    false_negatives: int
    true_negatives: int
    false_positives: int

    @property
    def sensitivity(self) -> Optional[Fraction]:
        pos = self.true_positives + self.false_negatives
        return Fraction(self.true_positives, pos) if pos else None

    @property
    def specificity(self) -> Optional[Fraction]:
        neg = self.true_negatives + self.false_positives
        return Fraction(self.true_negatives, neg) if neg else None


@dataclass(frozen=True)
class BalancedAccuracy:
    value: Fraction
    counts: BinaryClassificationCounts


def confusion_counts(pred: Sequence[bool], gold: Sequence[bool]) -> BinaryClassificationCounts:
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(gold)} gold labels")
    tp = fn = tn = fp = 0
    for p, g in zip(pred, gold):
        if g:
            tp += bool(p)
            fn += not p
        else:
            tn += not p
            fp += bool(p)
    return BinaryClassificationCounts(tp, fn, tn, fp)


def balanced_accuracy(pred: Sequence[bool], gold: Sequence[bool]) -> BalancedAccuracy:
    """Mean of sensitivity and specificity; positive means "has an error"."""
    if not gold:
        raise ValueError("balanced accuracy needs at least one label")
    counts = confusion_counts(pred, gold)
    sens, spec = counts.sensitivity, counts.specificity
    if sens is None or spec is None:
        missing = "positive" if sens is None else "negative"
        raise DegenerateGoldError(f"gold labels contain no {missing} examples")
    return BalancedAccuracy((sens + spec) / 2, counts)


# --------------------------------------------------------------------------
# correlations


def _as_floats(values: Sequence[Real]) -> list[float]:
    return [float(v) for v in values]


def pearson(x: Sequence[Real], y: Sequence[Real]) -> float:
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 3:
        raise StatisticError(f"correlation needs at least 3 pairs, got {len(x)}")
    xs, ys = _as_floats(x), _as_floats(y)
    mx, my = math.fsum(xs) / len(xs), math.fsum(ys) / len(ys)
    dx = [v - mx for v in xs]
    dy = [v - my for v in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise ZeroVarianceError("correlation is undefined for a constant vector")
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    r = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def rankdata(values: Sequence[Real]) -> list[float]:
    """1-based ranks; tied values share the average of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(x: Sequence[Real], y: Sequence[Real]) -> float:
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    try:
        return pearson(rankdata(x), rankdata(y))
    except ZeroVarianceError:
        raise ZeroVarianceError("spearman is undefined when every value is tied") from None


_STATISTICS: dict[str, Callable[[Sequence[Real], Sequence[Real]], float]] = {
    "pearson": pearson,
    "spearman": spearman,
}


def _batched_pearson(x: np.ndarray, ys: np.ndarray) -> np.ndarray:
    xc = x - x.mean()
    yc = ys - ys.mean(axis=1, keepdims=True)
    num = yc @ xc
    den = np.sqrt((xc @ xc) * np.einsum("ij,ij->i", yc, yc))
    return num / den


def permutation_p_value(
    x: Sequence[Real],
    y: Sequence[Real],
    statistic: str = "pearson",
    permutations: int = 10_000,
    seed: int = 0,
) -> float:
    """Two-sided permutation p-value, ``(1 + #{|perm| >= |obs|}) / (1 + permutations)``.

    The permutation indices are drawn up front from ``numpy.random.default_rng(seed)``.
    """
    if permutations < 100:
        raise ValueError("permutation test needs at least 100 permutations")
    if statistic not in _STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}")
    observed = _STATISTICS[statistic](x, y)
    if statistic == "spearman":
        xv, yv = np.asarray(rankdata(x)), np.asarray(rankdata(y))
    else:
        xv, yv = np.asarray(_as_floats(x)), np.asarray(_as_floats(y))
    rng = np.random.default_rng(seed)
    idx = np.argsort(rng.random((permutations, len(yv))), axis=1)
    permuted = _batched_pearson(xv, yv[idx])
    tol = 1e-12
    exceed = int(np.count_nonzero(np.abs(permuted) >= abs(observed) - tol))
    return (1 + exceed) / (1 + permutations)


# --------------------------------------------------------------------------
# system level


@dataclass(frozen=True)
class SystemRankRow:
    system_id: str
    predicted_mean: Fraction
    gold_mean: Fraction
    predicted_rank: float
    gold_rank: float


@dataclass(frozen=True)
class SystemRankCorrelation:
    coefficient: float
    rows: tuple[SystemRankRow, ...]


def _mean(values: Sequence[Real]) -> Fraction:
    return sum((Fraction(v) for v in values), Fraction(0)) / len(values)


def system_rank_correlation(
    predicted: Mapping[str, Sequence[Real]], gold: Mapping[str, Sequence[Real]]
) -> SystemRankCorrelation:
    """Spearman correlation between system rankings by mean score (rank 1 = highest mean)."""
    systems = sorted(set(predicted) & set(gold))
    missing = sorted(set(predicted) ^ set(gold))
    if missing:
        raise ValueError(f"systems missing on one side: {missing}")
    systems = [s for s in systems if predicted[s] and gold[s]]
    if len(systems) < 3:
        raise StatisticError(f"system-level correlation needs at least 3 systems, got {len(systems)}")
    pm = [_mean(predicted[s]) for s in systems]
    gm = [_mean(gold[s]) for s in systems]
    pr = rankdata([-v for v in pm])
    gr = rankdata([-v for v in gm])
    coefficient = pearson(pr, gr)
    rows = tuple(SystemRankRow(s, a, b, c, d) for s, a, b, c, d in zip(systems, pm, gm, pr, gr))
    return SystemRankCorrelation(coefficient, rows)


# --------------------------------------------------------------------------
# error localization


@dataclass(frozen=True)
class LocalizationReport:
    per_category: dict[ErrorCategory, Optional[Fraction]]
    mean: Optional[Fraction]
    confusion: dict[ErrorCategory, dict[ErrorCategory, int]]
    support: dict[ErrorCategory, int]
    excluded: int


def error_localization_accuracy(
    pred: Sequence[ErrorCategory], gold: Sequence[ErrorCategory]
) -> LocalizationReport:
    """Per-category accuracy over sentences whose gold label is one of the seven error types.

    Gold ``no error``/``other error`` rows are excluded (and counted in
    ``excluded``). The mean is unweighted over categories with support.
    """
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(gold)} gold labels")
    confusion = {g: {p: 0 for p in ErrorCategory} for g in LOCALIZATION_CATEGORIES}
    excluded = 0
    for p, g in zip(pred, gold):
        if g not in confusion:
            excluded += 1
            continue
        confusion[g][p] += 1
    support = {g: sum(row.values()) for g, row in confusion.items()}
    per_category: dict[ErrorCategory, Optional[Fraction]] = {}
    for g in LOCALIZATION_CATEGORIES:
        per_category[g] = Fraction(confusion[g][g], support[g]) if support[g] else None
    present = [v for v in per_category.values() if v is not None]
    mean = sum(present, Fraction(0)) / len(present) if present else None
    return LocalizationReport(per_category, mean, confusion, support, excluded)


# --------------------------------------------------------------------------
# inter-rater agreement


def cohen_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> Fraction:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise StatisticError("kappa needs at least 2 items")
    p_o = Fraction(sum(1 for x, y in zip(a, b) if x == y), n)
    ca, cb = Counter(a), Counter(b)
    p_e = sum((Fraction(ca[k] * cb[k], n * n) for k in set(ca) | set(cb)), Fraction(0))
    if p_e == 1:
        raise StatisticError("kappa is undefined when both raters use one identical label")
    return (p_o - p_e) / (1 - p_e)


def _nominal(a, b) -> Fraction:
    return Fraction(0) if a == b else Fraction(1)


def _interval(a, b) -> Fraction:
    d = Fraction(a) - Fraction(b)
    return d * d


def krippendorff_alpha(
    ratings: Sequence[Sequence[Optional[Hashable]]],
    metric: str = "nominal",
) -> Fraction:
    """Krippendorff's alpha over a raters x items matrix (``None`` marks a missing rating).

    Built from the coincidence matrix: ``alpha = 1 - D_o / D_e``. Items with
    fewer than two ratings are dropped. Perfect observed agreement returns 1
    even when there is no variation at all.
    """
    delta = {"nominal": _nominal, "interval": _interval}[metric]
    if len(ratings) < 2:
        raise StatisticError("alpha needs at least 2 raters")
    n_items = max(len(r) for r in ratings)
    coincidence: dict[tuple, Fraction] = defaultdict(Fraction)
    for j in range(n_items):
        values = [r[j] for r in ratings if j < len(r) and r[j] is not None]
        m_u = len(values)
        if m_u < 2:
            continue
        weight = Fraction(1, m_u - 1)
        for p in range(m_u):
            for q in range(m_u):
                if p != q:
                    coincidence[(values[p], values[q])] += weight
    if not coincidence:
        raise StatisticError("no item has two or more ratings (no pairable values)")
    marginals: dict[Hashable, Fraction] = defaultdict(Fraction)
    for (c, _k), v in coincidence.items():
        marginals[c] += v
    n = sum(marginals.values())
    d_o = sum((v * delta(c, k) for (c, k), v in coincidence.items()), Fraction(0)) / n
    labels = list(marginals)
    d_e = sum(
        (marginals[c] * marginals[k] * delta(c, k) for c in labels for k in labels),
        Fraction(0),
    ) / (n * (n - 1))
    if d_o == 0:
        return Fraction(1)
    if d_e == 0:
        raise StatisticError("expected disagreement is zero")
    return 1 - d_o / d_e


def krippendorff_alpha_nominal(ratings: Sequence[Sequence[Optional[Hashable]]]) -> Fraction:
    return krippendorff_alpha(ratings, "nominal")


def krippendorff_alpha_interval(ratings: Sequence[Sequence[Optional[Real]]]) -> Fraction:
    return krippendorff_alpha(ratings, "interval")
