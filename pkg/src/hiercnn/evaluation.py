"""Confusion matrices, F1 scores, stratified splits and folds, percentile
bootstrap intervals and the flat-vs-hierarchical comparison table."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import ClassTooSmall, MismatchedTestSets, UnknownLabel
from .nn import Rng

MACRO_CONVENTIONS = ("all", "present")


def _label_of(item) -> str:
    return str(item.label)


# --- confusion matrix and F1 --------------------------------------------------

@dataclass
class ConfusionMatrix:
    """Rows are gold labels, columns predicted labels."""

    classes: list[str]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else 0.0

    def recall(self) -> dict[str, float]:
        rows = self.counts.sum(axis=1)
        return {c: (self.counts[i, i] / rows[i] if rows[i] else 0.0) for i, c in enumerate(self.classes)}

    def to_tsv(self) -> str:
        lines = ["gold\\pred\t" + "\t".join(self.classes)]
        for c, row in zip(self.classes, self.counts):
            lines.append(c + "\t" + "\t".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def confusion(golds: Sequence, preds: Sequence, classes: Sequence) -> ConfusionMatrix:
    if len(golds) != len(preds):
        raise ValueError("golds and preds differ in length")
    classes = [str(c) for c in classes]
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for g, p in zip(golds, preds):
        try:
            counts[pos[str(g)], pos[str(p)]] += 1
        except KeyError as exc:
            raise UnknownLabel(f"label {exc.args[0]!r} not among classes") from None
    return ConfusionMatrix(classes, counts)


@dataclass
class MetricReport:
    f1_micro: float
    f1_macro: float
    per_class: dict[str, tuple[float, float, float]]
    n: int


def _f1(tp, fp, fn) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_scores(cm: ConfusionMatrix, macro_over: str = "all") -> MetricReport:
    """Per-class precision/recall/F1 plus micro and macro F1.

    ``macro_over="all"`` averages over every class in the matrix (absent
    classes count as 0); ``"present"`` skips classes with neither gold nor
    predicted instances.
    """
    if macro_over not in MACRO_CONVENTIONS:
        raise ValueError(f"macro_over must be one of {MACRO_CONVENTIONS}")
    counts = cm.counts
    tp = np.diag(counts).astype(np.int64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    per_class = {}
    f1s = []
    for i, c in enumerate(cm.classes):
        t, p_, n_ = int(tp[i]), int(fp[i]), int(fn[i])
        precision = t / (t + p_) if t + p_ else 0.0
        recall = t / (t + n_) if t + n_ else 0.0
        f1 = _f1(t, p_, n_)
        per_class[c] = (precision, recall, f1)
        if macro_over == "all" or t + p_ + n_ > 0:
            f1s.append(f1)
    micro = _f1(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    macro = float(np.mean(f1s)) if f1s else 0.0
    return MetricReport(micro, macro, per_class, cm.total)


def f1_from_indices(gold: np.ndarray, pred: np.ndarray, num_classes: int) -> tuple[float, float]:
    """Micro and macro F1 (all-classes convention) from integer label arrays."""
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    counts = np.bincount(gold * num_classes + pred, minlength=num_classes * num_classes)
    cm = ConfusionMatrix([str(i) for i in range(num_classes)], counts.reshape(num_classes, num_classes))
    report = f1_scores(cm)
    return report.f1_micro, report.f1_macro


# --- splits -------------------------------------------------------------------

def _by_class(items) -> dict[str, list[str]]:
    groups = defaultdict(list)
    for item in items:
        groups[_label_of(item)].append(item.id)
    return dict(sorted(groups.items()))


def _largest_remainder(n: int, fractions: Sequence[Fraction]) -> list[int]:
    quotas = [n * f for f in fractions]
    sizes = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_train_val_test(items: Iterable, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Stratified three-way split.

    Each class is shuffled and cut with largest-remainder rounding (ties go to
    the earlier split). Returns three id lists in input order.
    """
    items = list(items)
    fr = [Fraction(str(f)) for f in fractions]
    if len(fr) != 3 or sum(fr) != 1 or any(f < 0 for f in fr):
        raise ValueError("fractions must be three non-negative values summing to 1")
    rng = Rng(seed)
    assignment = {}
    for label, ids in _by_class(items).items():
        sizes = _largest_remainder(len(ids), fr)
        if sizes[0] == 0:
            raise ClassTooSmall(f"class {label} ({len(ids)} reports) gets no training report")
        shuffled = [ids[i] for i in rng.permutation(len(ids))]
        for part, (lo, hi) in enumerate([(0, sizes[0]), (sizes[0], sizes[0] + sizes[1]),
                                         (sizes[0] + sizes[1], len(ids))]):
            for rid in shuffled[lo:hi]:
                assignment[rid] = part
    splits = ([], [], [])
    for item in items:
        splits[assignment[item.id]].append(item.id)
    return splits


@dataclass
class FoldPlan:
    k: int
    assignments: dict[str, int]
    warnings: list[str] = field(default_factory=list)

    def fold(self, i: int) -> list[str]:
        return [rid for rid, f in self.assignments.items() if f == i]

    def sizes(self) -> list[int]:
        out = [0] * self.k
        for f in self.assignments.values():
            out[f] += 1
        return out

    def train_val_test(self, i: int) -> tuple[list[str], list[str], list[str]]:
        """Fold ``i`` is the test set, fold ``i + 1`` (mod k) validation."""
        val_fold = (i + 1) % self.k
        train, val, test = [], [], []
        for rid, f in self.assignments.items():
            (test if f == i else val if f == val_fold else train).append(rid)
        return train, val, test


def kfold_plan(items: Iterable, k: int = 10, seed: int = 0) -> FoldPlan:
    """Stratified k-fold assignment: per class, fold sizes differ by at most one."""
    if k < 2:
        raise ValueError("k must be at least 2")
    items = list(items)
    rng = Rng(seed)
    assignments_by_id = {}
    warnings = []
    offset = 0
    for label, ids in _by_class(items).items():
        if len(ids) < k:
            warnings.append(f"class {label} has {len(ids)} reports, fewer than k={k}")
        for j, i in enumerate(rng.permutation(len(ids))):
            assignments_by_id[ids[i]] = (offset + j) % k
        offset += len(ids)
    assignments = {item.id: assignments_by_id[item.id] for item in items}
    return FoldPlan(k, assignments, warnings)


# --- bootstrap ----------------------------------------------------------------

@dataclass
class BootstrapCI:
    point: float
    lower: float
    upper: float
    B: int
    alpha: float


def _nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    rank = max(1, math.ceil(q * len(sorted_values) - 1e-9))
    return float(sorted_values[min(rank, len(sorted_values)) - 1])


def bootstrap_ci(golds: Sequence, preds: Sequence, metric: str = "f1_micro", B: int = 1000,
                 alpha: float = 0.05, seed: int = 0, classes: Sequence | None = None,
                 macro_over: str = "all") -> BootstrapCI:
    """Percentile bootstrap over (gold, pred) pairs with nearest-rank endpoints."""
    if metric not in ("f1_micro", "f1_macro"):
        raise ValueError(f"unknown metric {metric!r}")
    n = len(golds)
    if n < 1 or B < 1 or len(preds) != n:
        raise ValueError("need n >= 1 paired labels and B >= 1")
    if classes is None:
        classes = sorted({str(x) for x in golds} | {str(x) for x in preds})
    classes = [str(c) for c in classes]
    pos = {c: i for i, c in enumerate(classes)}
    try:
        g = np.array([pos[str(x)] for x in golds], dtype=np.int64)
        p = np.array([pos[str(x)] for x in preds], dtype=np.int64)
    except KeyError as exc:
        raise UnknownLabel(f"label {exc.args[0]!r} not among classes") from None
    c = len(classes)
    cm = ConfusionMatrix(classes, np.bincount(g * c + p, minlength=c * c).reshape(c, c))
    point = getattr(f1_scores(cm, macro_over), metric)

    idx = Rng(seed).integers(0, n, (B, n))
    if metric == "f1_micro":
        stats = (g[idx] == p[idx]).mean(axis=1)
    else:
        stats = np.empty(B)
        chunk = max(1, 2_000_000 // max(n, 1))
        for s in range(0, B, chunk):
            block = idx[s:s + chunk]
            nb = len(block)
            cells = (np.arange(nb)[:, None] * c * c + g[block] * c + p[block]).ravel()
            counts = np.bincount(cells, minlength=nb * c * c).reshape(nb, c, c)
            tp = np.diagonal(counts, axis1=1, axis2=2)
            fp = counts.sum(axis=1) - tp
            fn = counts.sum(axis=2) - tp
            denom = 2 * tp + fp + fn
            f1 = np.divide(2 * tp, denom, out=np.zeros(tp.shape), where=denom > 0)
            if macro_over == "all":
                stats[s:s + nb] = f1.mean(axis=1)
            else:
                present = denom > 0
                stats[s:s + nb] = np.where(present.any(axis=1),
                                           (f1 * present).sum(axis=1) / np.maximum(present.sum(axis=1), 1),
                                           0.0)
    stats.sort()
    return BootstrapCI(float(point), _nearest_rank(stats, alpha / 2), _nearest_rank(stats, 1 - alpha / 2),
                       B, alpha)


# --- results files and comparison ---------------------------------------------

@dataclass
class ResultSet:
    """Per-document predictions of one classifier on one test set."""

    classifier: str
    ids: list[str]
    golds: list[str]
    preds: list[str]
    max_probs: list[float]
    classes: list[str] | None = None

    def class_list(self) -> list[str]:
        if self.classes is not None:
            return list(self.classes)
        return sorted(set(self.golds) | set(self.preds))

    def to_tsv(self) -> str:
        return "".join(f"{i}\t{g}\t{p}\t{m:.6f}\n"
                       for i, g, p, m in zip(self.ids, self.golds, self.preds, self.max_probs))

    @classmethod
    def from_tsv(cls, text: str, classifier: str = "", classes=None) -> "ResultSet":
        ids, golds, preds, probs = [], [], [], []
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            rid, g, p, m = line.split("\t")
            ids.append(rid)
            golds.append(g)
            preds.append(p)
            probs.append(float(m))
        return cls(classifier, ids, golds, preds, probs, classes)

    def metrics(self, macro_over: str = "all") -> MetricReport:
        return f1_scores(confusion(self.golds, self.preds, self.class_list()), macro_over)


COMPARISON_HEADER = ("classes", "classifier", "f1_micro", "ci_low", "ci_high",
                     "f1_macro", "ci_low", "ci_high")


@dataclass
class ComparisonRow:
    classes: int
    classifier: str
    f1_micro: BootstrapCI
    f1_macro: BootstrapCI

    def cells(self) -> list[str]:
        mi, ma = self.f1_micro, self.f1_macro
        return [str(self.classes), self.classifier, f"{mi.point:.3f}", f"{mi.lower:.3f}", f"{mi.upper:.3f}",
                f"{ma.point:.3f}", f"{ma.lower:.3f}", f"{ma.upper:.3f}"]


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]
    per_class: dict[str, MetricReport]
    split: str = "test"

    def to_tsv(self) -> str:
        lines = ["\t".join(COMPARISON_HEADER)] + ["\t".join(r.cells()) for r in self.rows]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        table = [list(COMPARISON_HEADER)] + [r.cells() for r in self.rows]
        widths = [max(len(row[i]) for row in table) for i in range(len(COMPARISON_HEADER))]
        lines = [f"split: {self.split}"]
        for row in table:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def per_class_tsv(self) -> str:
        lines = ["classifier\tlabel\tprecision\trecall\tf1"]
        for name, report in self.per_class.items():
            for label, (p, r, f) in report.per_class.items():
                lines.append(f"{name}\t{label}\t{p:.4f}\t{r:.4f}\t{f:.4f}")
        return "\n".join(lines) + "\n"


def compare_report(flat: ResultSet, hier: ResultSet, cv_results: Sequence[ResultSet] = (),
                   B: int = 1000, alpha: float = 0.05, seed: int = 0, macro_over: str = "all",
                   split: str = "test") -> ComparisonTable:
    """Table of F1-micro/macro with bootstrap intervals for each classifier.

    ``flat`` and ``hier`` must be scored on the identical test documents.
    """
    if flat.ids != hier.ids or flat.golds != hier.golds:
        raise MismatchedTestSets("flat and hierarchical results cover different test documents")
    results = (flat, hier, *cv_results)
    rows = [score_row(rs, B, alpha, seed, macro_over) for rs in results]
    per_class = {rs.classifier: rs.metrics(macro_over) for rs in results}
    return ComparisonTable(rows, per_class, split)


def score_row(rs: ResultSet, B: int = 1000, alpha: float = 0.05, seed: int = 0,
              macro_over: str = "all") -> ComparisonRow:
    classes = rs.class_list()
    ci = {m: bootstrap_ci(rs.golds, rs.preds, m, B, alpha, seed, classes, macro_over)
          for m in ("f1_micro", "f1_macro")}
    return ComparisonRow(len(classes), rs.classifier, ci["f1_micro"], ci["f1_macro"])
