"""Classification metrics. ``None`` marks a metric whose denominator is zero."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "auc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion_counts(predicted, truth) -> ConfusionCounts:
    p = np.asarray(predicted).astype(bool).reshape(-1)
    t = np.asarray(truth).astype(bool).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} truths")
    if p.size == 0:
        raise ValueError("need at least one sample")
    return ConfusionCounts(
        tp=int(np.sum(p & t)),
        tn=int(np.sum(~p & ~t)),
        fp=int(np.sum(p & ~t)),
        fn=int(np.sum(~p & t)),
    )


def _ratio(num: float, den: float) -> Optional[float]:
    return num / den if den else None


def classification_metrics(cc: ConfusionCounts) -> Dict[str, Optional[float]]:
    if cc.total <= 0:
        raise ValueError("empty confusion table")
    precision = _ratio(cc.tp, cc.tp + cc.fp)
    recall = _ratio(cc.tp, cc.tp + cc.fn)
    f1 = None
    if precision is not None and recall is not None:
        f1 = _ratio(2 * precision * recall, precision + recall)
    return {
        "accuracy": (cc.tp + cc.tn) / cc.total,
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def _average_ranks(x: np.ndarray) -> np.ndarray:
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts).astype(np.float64)
    return (ends - (counts - 1) / 2.0)[inverse]


def auc(scores, truths) -> float:
    """Rank-based ROC AUC; tied positive/negative pairs count one half."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    t = np.asarray(truths).astype(bool).reshape(-1)
    if s.shape != t.shape:
        raise ValueError(f"length mismatch: {s.size} scores vs {t.size} truths")
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative samples")
    ranks = _average_ranks(s)
    # the rank sum and the offset are half-integers, so this numerator is exact
    u = ranks[t].sum() - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass
class MetricsBundle:
    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    auc: Optional[float]
    per_class: List[Dict[str, Optional[float]]] = field(default_factory=list)
    averaging: str = "binary"

    def headline(self) -> Dict[str, Optional[float]]:
        return {k: getattr(self, k) for k in METRIC_NAMES}

    def to_json(self) -> dict:
        return asdict(self)

    def csv_row(self) -> List[str]:
        return ["" if v is None else repr(float(v)) for v in self.headline().values()]


def _binary_bundle(pred_bits, true_bits, scores) -> Dict[str, Optional[float]]:
    out = classification_metrics(confusion_counts(pred_bits, true_bits))
    t = np.asarray(true_bits).astype(bool)
    out["auc"] = auc(scores, t) if 0 < t.sum() < t.size else None
    return out


def multiclass_metrics(pred_labels, true_labels, scores, num_classes: Optional[int] = None) -> MetricsBundle:
    """One-vs-rest metrics per class.

    With two classes the headline numbers are the binary metrics of class 1;
    otherwise they are macro averages over the classes where each metric is
    defined.
    """
    pred = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    true = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    S = np.asarray(scores, dtype=np.float64)
    C = num_classes or max(int(true.max()), int(pred.max()), S.shape[1] - 1 if S.ndim == 2 else 1) + 1
    if S.ndim == 1:
        S = np.stack([1.0 - S, S], axis=1)
    per_class = [_binary_bundle(pred == j, true == j, S[:, j]) for j in range(C)]
    accuracy = float(np.mean(pred == true))
    if C == 2:
        head = dict(per_class[1])
        head["accuracy"] = accuracy
        return MetricsBundle(**head, per_class=per_class, averaging="binary")
    macro: Dict[str, Optional[float]] = {}
    for key in ("precision", "recall", "f1", "auc"):
        vals = [pc[key] for pc in per_class if pc[key] is not None]
        macro[key] = float(np.mean(vals)) if vals else None
    return MetricsBundle(accuracy=accuracy, per_class=per_class, averaging="macro", **macro)


def bundles_to_csv(rows: Dict[str, MetricsBundle]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["head", *METRIC_NAMES])
    for name, bundle in rows.items():
        writer.writerow([name, *bundle.csv_row()])
    return buf.getvalue()
