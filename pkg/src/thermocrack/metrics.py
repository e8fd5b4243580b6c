"""Confusion-matrix accumulation and the evaluation metrics
(accuracy, precision, recall, F1), one-vs-rest per class with unweighted
macro averages, plus plain-text report rendering.

``paper_formulas=True`` switches to the literal printed variants this work
compares against (per-class accuracy (TP+FN)/total and F1 without the
factor 2); the default is the conventional definitions.
"""

from dataclasses import dataclass, field

import numpy as np

from .dataset import CrackLevel
from .errors import DomainError

N_CLASSES = 3


@dataclass
class ConfusionMatrix:
    """3x3 counts; rows = actual level, columns = predicted level."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_CLASSES, N_CLASSES),
                                                                dtype=np.int64))

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (N_CLASSES, N_CLASSES) or (self.counts < 0).any():
            raise DomainError(f"ConfusionMatrix: need non-negative 3x3 counts, "
                              f"got shape {self.counts.shape}")

    @property
    def total(self):
        return int(self.counts.sum())

    def accumulate(self, actual, predicted):
        """Increment one cell; levels are 1-based CrackLevel values."""
        self.counts[int(actual) - 1, int(predicted) - 1] += 1
        return self

    def merge(self, other):
        """Cell-wise sum (associative and commutative; for parallel shards)."""
        return ConfusionMatrix(self.counts + other.counts)


@dataclass
class ClassMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined: bool  # true if any 0/0 ratio was replaced by 0


@dataclass
class MetricsReport:
    matrix: ConfusionMatrix
    accuracy: float               # trace / total
    per_class: list               # ClassMetrics, index = level - 1
    macro_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    paper_formulas: bool = False

    def to_dict(self):
        return {
            "counts": self.matrix.counts.tolist(),
            "total": self.matrix.total,
            "accuracy": self.accuracy,
            "macro_accuracy": self.macro_accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "paper_formulas": self.paper_formulas,
            "per_class": [
                {"level": i + 1, "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
                 "accuracy": c.accuracy, "precision": c.precision,
                 "recall": c.recall, "f1": c.f1, "undefined": c.undefined}
                for i, c in enumerate(self.per_class)
            ],
        }


def _ratio(num, den):
    """num/den with the 0/0 convention: (value, undefined_flag)."""
    if den == 0:
        return 0.0, True
    return num / den, False


def compute_metrics(cm, paper_formulas=False):
    """One-vs-rest metrics per class plus unweighted macro averages."""
    counts = cm.counts
    total = cm.total
    if total == 0:
        raise DomainError("compute_metrics: empty confusion matrix")
    per_class = []
    for k in range(N_CLASSES):
        tp = int(counts[k, k])
        fp = int(counts[:, k].sum() - tp)
        fn = int(counts[k, :].sum() - tp)
        tn = total - tp - fp - fn
        precision, p_undef = _ratio(tp, tp + fp)
        recall, r_undef = _ratio(tp, tp + fn)
        if paper_formulas:
            accuracy = (tp + fn) / total
            f1, f_undef = _ratio(precision * recall, precision + recall)
        else:
            accuracy = (tp + tn) / total
            f1, f_undef = _ratio(2.0 * precision * recall, precision + recall)
        per_class.append(ClassMetrics(tp=tp, fp=fp, fn=fn, tn=tn,
                                      accuracy=accuracy, precision=precision,
                                      recall=recall, f1=f1,
                                      undefined=p_undef or r_undef or f_undef))
    return MetricsReport(
        matrix=cm,
        accuracy=float(np.trace(counts)) / total,
        per_class=per_class,
        macro_accuracy=float(np.mean([c.accuracy for c in per_class])),
        macro_precision=float(np.mean([c.precision for c in per_class])),
        macro_recall=float(np.mean([c.recall for c in per_class])),
        macro_f1=float(np.mean([c.f1 for c in per_class])),
        paper_formulas=paper_formulas,
    )


def _pct(x):
    return f"{100.0 * x:.2f}%"


def render_report(reports):
    """Fixed-width comparison table plus one confusion matrix per source.

    ``reports`` maps source kind -> MetricsReport; matrix cells show the
    count and its percent of the grand total.
    """
    if not reports:
        raise DomainError("render_report: need at least one report")
    lines = []
    header = f"{'Image Type':<16}{'Accuracy':>10}{'Precision':>11}{'Recall':>9}{'F1':>9}"
    lines.append(header)
    lines.append("-" * len(header))
    for source, rep in reports.items():
        lines.append(f"{source:<16}{_pct(rep.accuracy):>10}{_pct(rep.macro_precision):>11}"
                     f"{_pct(rep.macro_recall):>9}{_pct(rep.macro_f1):>9}")
    for source, rep in reports.items():
        total = rep.matrix.total
        lines.append("")
        lines.append(f"Confusion matrix [{source}] (rows = actual, columns = predicted):")
        col_header = f"{'':<10}" + "".join(f"{'pred L' + str(j + 1):>16}" for j in range(N_CLASSES))
        lines.append(col_header)
        for i in range(N_CLASSES):
            cells = "".join(
                f"{rep.matrix.counts[i, j]:>6} ({_pct(rep.matrix.counts[i, j] / total):>7})"
                for j in range(N_CLASSES))
            lines.append(f"{'actual L' + str(i + 1):<10}{cells}")
        flagged = [i + 1 for i, c in enumerate(rep.per_class) if c.undefined]
        if flagged:
            lines.append(f"note: 0/0 metrics reported as 0 for level(s) {flagged}")
    return "\n".join(lines) + "\n"
