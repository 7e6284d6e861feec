"""Agreement statistics between slide annotators, plus patch-level classifier metrics.

Confidence intervals use the normal approximation and are clamped to each
metric's valid range. Kappa uses SE = sqrt(po (1 - po) / (n (1 - pe)^2)).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import CANCEROUS, HistologicPattern, LengthMismatch, WsiPatternsError

Z95 = 1.96


class EmptySeries(WsiPatternsError, ValueError):
    pass


class InsufficientSamples(WsiPatternsError, ValueError):
    pass


class ZeroVarianceBoth(WsiPatternsError, ValueError):
    pass


class OneClassOnly(WsiPatternsError, ValueError):
    pass


class RequiresExactlyThreeOthers(WsiPatternsError, ValueError):
    pass


class MissingPair(WsiPatternsError, KeyError):
    pass


# --------------------------------------------------------------------------
# kappa and agreement


class KappaResult(NamedTuple):
    kappa: float
    po: float
    pe: float


def _check_aligned(a, b):
    if len(a) != len(b):
        raise LengthMismatch(f"series lengths differ: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise EmptySeries("cannot compare empty series")


def cohen_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> KappaResult:
    """Cohen's kappa of two categorical series.

    When chance agreement is total (pe = 1, i.e. both raters used one and the
    same category throughout) kappa is defined as 1 if po = 1, else 0.
    """
    _check_aligned(a, b)
    n = len(a)
    po = sum(1 for x, y in zip(a, b) if x == y) / n
    count_a, count_b = {}, {}
    for x in a:
        count_a[x] = count_a.get(x, 0) + 1
    for y in b:
        count_b[y] = count_b.get(y, 0) + 1
    pe = sum(count_a[c] * count_b.get(c, 0) for c in count_a) / (n * n)
    if pe >= 1.0:
        return KappaResult(1.0 if po >= 1.0 else 0.0, po, pe)
    return KappaResult((po - pe) / (1.0 - pe), po, pe)


def _clamp(lo, hi, low_bound, high_bound):
    return (max(low_bound, lo), min(high_bound, hi))


def kappa_standard_error(po: float, pe: float, n: int) -> float:
    if pe >= 1.0:
        return 0.0
    return math.sqrt(po * (1.0 - po) / (n * (1.0 - pe) ** 2))


def proportion_ci(p: float, n: int) -> tuple:
    half = Z95 * math.sqrt(p * (1.0 - p) / n)
    return _clamp(p - half, p + half, 0.0, 1.0)


@dataclass(frozen=True)
class LabeledSeries:
    annotator_id: str
    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self):
        return len(self.labels)

    @property
    def predominants(self) -> list:
        # None stands for Indeterminate, its own category
        return [label.predominant for label in self.labels]

    def presence(self, pattern: HistologicPattern) -> list:
        return [label.has(pattern) for label in self.labels]


class KappaCI(NamedTuple):
    kappa: float
    ci: tuple
    se: float
    po: float
    pe: float


def kappa_predom(a: LabeledSeries, b: LabeledSeries) -> KappaCI:
    """Kappa on predominant patterns with a 95% normal-approximation CI."""
    _check_aligned(a.labels, b.labels)
    k = cohen_kappa(a.predominants, b.predominants)
    se = kappa_standard_error(k.po, k.pe, len(a))
    ci = _clamp(k.kappa - Z95 * se, k.kappa + Z95 * se, -1.0, 1.0)
    return KappaCI(k.kappa, ci, se, k.po, k.pe)


def agreement_indicators(a: LabeledSeries, b: LabeledSeries) -> list:
    _check_aligned(a.labels, b.labels)
    return [1.0 if x == y else 0.0 for x, y in zip(a.predominants, b.predominants)]


def predominant_agreement(a: LabeledSeries, b: LabeledSeries) -> tuple:
    """Fraction of slides with the same predominant pattern, and its 95% CI."""
    hits = agreement_indicators(a, b)
    p = sum(hits) / len(hits)
    return p, proportion_ci(p, len(hits))


def per_class_kappa(a: LabeledSeries, b: LabeledSeries, pattern: HistologicPattern) -> float:
    """Kappa on presence of ``pattern`` anywhere in the label (predominant or minor)."""
    _check_aligned(a.labels, b.labels)
    return cohen_kappa(a.presence(pattern), b.presence(pattern)).kappa


def robust_indicators(target: LabeledSeries, others: Sequence[LabeledSeries]) -> list:
    if len(others) != 3:
        raise RequiresExactlyThreeOthers(f"robust agreement needs exactly three other annotators, got {len(others)}")
    for o in others:
        _check_aligned(target.labels, o.labels)
    out = []
    for i, mine in enumerate(target.predominants):
        votes = sum(1 for o in others if o.labels[i].predominant == mine)
        out.append(1.0 if votes >= 2 else 0.0)
    return out


def robust_agreement(target: LabeledSeries, others: Sequence[LabeledSeries]) -> float:
    """Fraction of slides where ``target`` matches at least two of the three others."""
    hits = robust_indicators(target, others)
    return sum(hits) / len(hits)


def _pair_key(a: str, b: str) -> frozenset:
    return frozenset((a, b))


def group_average(ids: Sequence[str], pairwise: Mapping) -> float:
    """Mean of a pairwise statistic over every pair drawn from ``ids``."""
    values = []
    for a, b in itertools.combinations(ids, 2):
        key = _pair_key(a, b)
        if key not in pairwise:
            raise MissingPair(f"no value for pair {a} & {b}")
        values.append(pairwise[key])
    if not values:
        raise MissingPair("need at least two annotators")
    return sum(values) / len(values)


def average_kappa(target_id: str, all_pairwise_kappas: Mapping) -> float:
    """Mean of the kappas of every pair that includes ``target_id``.

    ``all_pairwise_kappas`` maps ``frozenset({id_a, id_b})`` (or a 2-tuple) to
    a kappa and must contain every pair among the annotators it mentions.
    """
    pairs = {frozenset(k): v for k, v in all_pairwise_kappas.items()}
    ids = sorted(set().union(*pairs)) if pairs else []
    for a, b in itertools.combinations(ids, 2):
        if _pair_key(a, b) not in pairs:
            raise MissingPair(f"no kappa for pair {a} & {b}")
    if target_id not in ids:
        raise MissingPair(f"no pairs involve {target_id}")
    values = [pairs[_pair_key(target_id, o)] for o in ids if o != target_id]
    return sum(values) / len(values)


# --------------------------------------------------------------------------
# Welch's t-test


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 1000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        step = d * c
        h *= step
        if abs(step - 1.0) < 1e-15:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, dof: float) -> float:
    if math.isinf(t):
        return 0.0
    t2 = t * t
    if t2 < dof:
        # complementary form avoids rounding dof / (dof + t^2) to 1 for small t
        return 1.0 - regularized_incomplete_beta(0.5, dof / 2.0, t2 / (dof + t2))
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t2))


class WelchResult(NamedTuple):
    t: float
    dof: float
    p: float


def welch_t_test(x: Sequence[float], y: Sequence[float]) -> WelchResult:
    """Unequal-variance two-sample t-test with Welch-Satterthwaite degrees of freedom."""
    nx, ny = len(x), len(y)
    if nx < 2 or ny < 2:
        raise InsufficientSamples(f"need at least two values per sample, got {nx} and {ny}")
    mx, my = math.fsum(x) / nx, math.fsum(y) / ny
    vx = math.fsum((v - mx) ** 2 for v in x) / (nx - 1)
    vy = math.fsum((v - my) ** 2 for v in y) / (ny - 1)
    if vx == 0.0 and vy == 0.0:
        if mx == my:
            return WelchResult(0.0, float(nx + ny - 2), 1.0)
        raise ZeroVarianceBoth(f"both samples are constant with different means ({mx} vs {my})")
    sx, sy = vx / nx, vy / ny
    t = (mx - my) / math.sqrt(sx + sy)
    dof = (sx + sy) ** 2 / (sx ** 2 / (nx - 1) + sy ** 2 / (ny - 1))
    return WelchResult(t, dof, student_t_two_sided_p(t, dof))


# --------------------------------------------------------------------------
# patch-level classifier metrics


class ClassMetrics(NamedTuple):
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    precision_ci: Optional[tuple]
    recall_ci: Optional[tuple]
    f1_ci: Optional[tuple]
    support: int


def _ratio(num: int, den: int):
    if den == 0:
        return None, None
    p = num / den
    return p, proportion_ci(p, den)


def precision_recall_f1(preds: Sequence, refs: Sequence, cls) -> ClassMetrics:
    """One-vs-rest precision, recall and F1 for ``cls``.

    An undefined ratio (zero denominator) is reported as None. F1 is
    2TP / (2TP + FP + FN) and its CI uses that denominator.
    """
    _check_aligned(preds, refs)
    tp = sum(1 for p, r in zip(preds, refs) if p == cls and r == cls)
    fp = sum(1 for p, r in zip(preds, refs) if p == cls and r != cls)
    fn = sum(1 for p, r in zip(preds, refs) if p != cls and r == cls)
    precision, precision_ci = _ratio(tp, tp + fp)
    recall, recall_ci = _ratio(tp, tp + fn)
    f1, f1_ci = _ratio(2 * tp, 2 * tp + fp + fn)
    return ClassMetrics(precision, recall, f1, precision_ci, recall_ci, f1_ci, tp + fn)


def macro_average(per_class: Mapping) -> dict:
    """Mean of each defined metric across classes; None when no class defines it."""
    out = {}
    for name in ("precision", "recall", "f1"):
        vals = [getattr(m, name) for m in per_class.values() if getattr(m, name) is not None]
        out[name] = sum(vals) / len(vals) if vals else None
    return out


def classification_report(preds: Sequence, refs: Sequence, classes: Sequence) -> dict:
    per_class = {c: precision_recall_f1(preds, refs, c) for c in classes}
    return {"per_class": per_class, "macro": macro_average(per_class)}


class RocResult(NamedTuple):
    auc: float
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray


def roc_auc(scores: Sequence[float], positives: Sequence[bool]) -> RocResult:
    """AUC as the Mann-Whitney statistic (ties count one half) plus the ROC staircase.

    The curve has one point per distinct score, sweeping the threshold
    downward from +inf; a sample is called positive when its score >= threshold.
    """
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    _check_aligned(s, pos)
    m, n = int(pos.sum()), int((~pos).sum())
    if m == 0 or n == 0:
        raise OneClassOnly("ROC needs at least one positive and one negative")
    ranks = rankdata(s)
    auc = (ranks[pos].sum() - m * (m + 1) / 2.0) / (m * n)
    distinct = np.unique(s)[::-1]
    pos_sorted = np.sort(s[pos])
    neg_sorted = np.sort(s[~pos])
    tp = m - np.searchsorted(pos_sorted, distinct, side="left")
    fp = n - np.searchsorted(neg_sorted, distinct, side="left")
    thresholds = np.concatenate([[np.inf], distinct])
    fpr = np.concatenate([[0.0], fp / n])
    tpr = np.concatenate([[0.0], tp / m])
    return RocResult(float(auc), thresholds, fpr, tpr)


def one_vs_rest_roc(prob_rows: Sequence[Sequence[float]], refs: Sequence, classes=tuple(HistologicPattern)) -> dict:
    """Per-class ROC for a matrix of class probabilities (rows in canonical order)."""
    probs = np.asarray(prob_rows, dtype=np.float64)
    out = {}
    for c in classes:
        positives = [r == c for r in refs]
        if all(positives) or not any(positives):
            continue
        out[c] = roc_auc(probs[:, int(c)], positives)
    return out


# --------------------------------------------------------------------------
# the multi-annotator report


@dataclass(frozen=True)
class PairStats:
    a: str
    b: str
    kappa_predom: float
    ci: tuple
    se: float
    agreement: float
    agreement_ci: tuple
    per_class_kappa: tuple

    def to_json(self) -> dict:
        return {
            "annotators": [self.a, self.b],
            "kappa_predom": self.kappa_predom,
            "kappa_ci": list(self.ci),
            "kappa_se": self.se,
            "agreement": self.agreement,
            "agreement_ci": list(self.agreement_ci),
            "per_class_kappa": {p.key: k for p, k in zip(CANCEROUS, self.per_class_kappa)},
        }


def pair_stats(a: LabeledSeries, b: LabeledSeries) -> PairStats:
    k = kappa_predom(a, b)
    agree, agree_ci = predominant_agreement(a, b)
    per_class = tuple(per_class_kappa(a, b, p) for p in CANCEROUS)
    return PairStats(a.annotator_id, b.annotator_id, k.kappa, k.ci, k.se, agree, agree_ci, per_class)


@dataclass(frozen=True)
class SummaryRow:
    """One summary-table row: averaged kappa and agreement plus robust agreement."""

    name: str
    kappa: float
    kappa_ci: tuple
    agreement: float
    agreement_ci: tuple
    robust_agreement: Optional[float]
    robust_ci: Optional[tuple]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kappa": self.kappa,
            "kappa_ci": list(self.kappa_ci),
            "agreement": self.agreement,
            "agreement_ci": list(self.agreement_ci),
            "robust_agreement": self.robust_agreement,
            "robust_ci": None if self.robust_ci is None else list(self.robust_ci),
        }


class PairTest(NamedTuple):
    first: tuple
    second: tuple
    t: Optional[float]
    dof: Optional[float]
    p: Optional[float]
    note: str


def _summary(name: str, pairs: Sequence[PairStats], n: int, robust: Optional[float]) -> SummaryRow:
    kappa = sum(p.kappa_predom for p in pairs) / len(pairs)
    se = sum(p.se for p in pairs) / len(pairs)
    agreement = sum(p.agreement for p in pairs) / len(pairs)
    return SummaryRow(
        name,
        kappa,
        _clamp(kappa - Z95 * se, kappa + Z95 * se, -1.0, 1.0),
        agreement,
        proportion_ci(agreement, n),
        robust,
        None if robust is None else proportion_ci(robust, n),
    )


@dataclass
class AgreementReport:
    annotators: list
    model_id: str
    n_slides: int
    pairs: list
    rows: list
    tests: list
    baseline_id: Optional[str] = None
    baseline_pairs: list = field(default_factory=list)

    def pair(self, a: str, b: str) -> PairStats:
        for p in self.pairs + self.baseline_pairs:
            if {p.a, p.b} == {a, b}:
                return p
        raise MissingPair(f"no pair {a} & {b}")

    def row(self, name: str) -> SummaryRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "annotators": list(self.annotators),
            "model": self.model_id,
            "baseline": self.baseline_id,
            "n_slides": self.n_slides,
            "pairs": [p.to_json() for p in self.pairs],
            "baseline_pairs": [p.to_json() for p in self.baseline_pairs],
            "table": [r.to_json() for r in self.rows],
            "t_tests": [
                {"first": list(t.first), "second": list(t.second), "t": t.t, "dof": t.dof, "p": t.p, "note": t.note}
                for t in self.tests
            ],
        }

    def matrix(self, attr: str) -> list:
        ids = self.annotators
        out = []
        for a in ids:
            row = []
            for b in ids:
                row.append(None if a == b else getattr(self.pair(a, b), attr))
            out.append(row)
        return out

    def per_class_rows(self) -> list:
        """(a, b, kappa per cancerous class...) rows for every pair."""
        return [(p.a, p.b) + tuple(p.per_class_kappa) for p in self.pairs + self.baseline_pairs]

    def table_text(self) -> str:
        """Aligned plain-text rendering: summary table, then pairwise matrices."""

        def interval(value, ci, scale, digits):
            if value is None:
                return "-"
            lo, hi = ci
            return f"{value * scale:.{digits}f} ({lo * scale:.{digits}f}-{hi * scale:.{digits}f})"

        header = ("", "Kappa Score", "Agreement (%)", "R. Agreement (%)")
        body = [
            (r.name, interval(r.kappa, r.kappa_ci, 1, 3), interval(r.agreement, r.agreement_ci, 100, 1),
             interval(r.robust_agreement, r.robust_ci, 100, 1))
            for r in self.rows
        ]
        lines = [f"Predominant pattern agreement over {self.n_slides} slides", ""]
        lines += _align([header] + body)

        ids = self.annotators
        for title, attr, fmt in (("Kappa (predominant)", "kappa_predom", "{:.3f}"),
                                 ("Agreement (predominant, %)", "agreement", "{:.1f}")):
            scale = 100 if attr == "agreement" else 1
            lines += ["", title]
            grid = [("",) + tuple(ids)]
            for a, row in zip(ids, self.matrix(attr)):
                grid.append((a,) + tuple("-" if v is None else fmt.format(v * scale) for v in row))
            lines += _align(grid)

        lines += ["", "Kappa per pattern (presence anywhere on the slide)"]
        grid = [("pair",) + tuple(p.key for p in CANCEROUS)]
        for row in self.per_class_rows():
            grid.append((f"{row[0]} & {row[1]}",) + tuple(f"{k:.3f}" for k in row[2:]))
        lines += _align(grid)
        return "\n".join(lines) + "\n"


def _align(rows) -> list:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    return ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]


def agreement_report(
    series: Sequence[LabeledSeries],
    baseline: Optional[LabeledSeries] = None,
    model_id: Optional[str] = None,
) -> AgreementReport:
    """Pairwise and averaged agreement between annotators and a model.

    ``model_id`` defaults to the last series; every other series is treated
    as a pathologist. Rows: each annotator (average over its pairs),
    "inter-pathologist" (average over pathologist-only pairs), the optional
    baseline (averaged against the pathologists only), in that order with the
    model last. Robust agreement needs exactly four series and is None
    otherwise. Welch tests compare the per-slide agreement indicators of every
    two pairs.
    """
    series = list(series)
    if len(series) < 2:
        raise InsufficientSamples("need at least two annotators")
    ids = [s.annotator_id for s in series]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate annotator ids: {ids}")
    n = len(series[0])
    for s in series[1:] + ([baseline] if baseline is not None else []):
        _check_aligned(series[0].labels, s.labels)
    model_id = model_id or ids[-1]
    if model_id not in ids:
        raise KeyError(f"model {model_id!r} is not among the annotators")
    by_id = dict(zip(ids, series))
    readers = [i for i in ids if i != model_id]

    pairs = [pair_stats(by_id[a], by_id[b]) for a, b in itertools.combinations(ids, 2)]
    index = {frozenset((p.a, p.b)): p for p in pairs}

    def robust_for(target: LabeledSeries, pool):
        others = [by_id[i] for i in pool if i != target.annotator_id]
        if len(others) != 3:
            return None
        return robust_agreement(target, others)

    rows = []
    for a in readers:
        mine = [index[frozenset((a, b))] for b in ids if b != a]
        rows.append(_summary(a, mine, n, robust_for(by_id[a], ids)))
    if len(readers) >= 2:
        reader_pairs = [index[frozenset(ab)] for ab in itertools.combinations(readers, 2)]
        reader_robust = [r.robust_agreement for r in rows]
        robust = None if any(v is None for v in reader_robust) else sum(reader_robust) / len(reader_robust)
        rows.append(_summary("inter-pathologist", reader_pairs, n, robust))

    baseline_pairs = []
    if baseline is not None:
        baseline_pairs = [pair_stats(baseline, by_id[r]) for r in readers]
        robust = robust_agreement(baseline, [by_id[r] for r in readers]) if len(readers) == 3 else None
        rows.append(_summary(baseline.annotator_id, baseline_pairs, n, robust))

    mine = [index[frozenset((model_id, b))] for b in ids if b != model_id]
    rows.append(_summary(model_id, mine, n, robust_for(by_id[model_id], ids)))

    indicators = {(p.a, p.b): agreement_indicators(by_id[p.a], by_id[p.b]) for p in pairs}
    tests = []
    for first, second in itertools.combinations(list(indicators), 2):
        try:
            res = welch_t_test(indicators[first], indicators[second])
            tests.append(PairTest(first, second, res.t, res.dof, res.p, ""))
        except ZeroVarianceBoth as err:
            tests.append(PairTest(first, second, None, None, None, str(err)))
        except InsufficientSamples as err:
            tests.append(PairTest(first, second, None, None, None, str(err)))

    return AgreementReport(
        annotators=ids,
        model_id=model_id,
        n_slides=n,
        pairs=pairs,
        rows=rows,
        tests=tests,
        baseline_id=None if baseline is None else baseline.annotator_id,
        baseline_pairs=baseline_pairs,
    )
