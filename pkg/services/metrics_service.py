import json
import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix

from errors import DataFormatError
from models import SUBTASK_LABELS

logger = logging.getLogger(__name__)

REPORT_DECIMALS = 4


def round_half_away(value: float, decimals: int = REPORT_DECIMALS) -> float:
    """Round half away from zero, as the shared-task result tables are."""
    quantum = Decimal(1).scaleb(-decimals)
    rounded = Decimal(repr(value)).copy_abs().quantize(quantum, rounding=ROUND_HALF_UP)
    return float(rounded) if value >= 0 else -float(rounded)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts indexed [gold, predicted] over an ordered class set."""

    labels: Tuple[str, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def render(self) -> str:
        """Plain-text table, rows gold and columns predicted."""
        width = max(len(str(self.counts.max())) if self.counts.size else 1,
                    *(len(label) for label in self.labels), len("gold\\pred"))
        header = "gold\\pred".ljust(width) + "".join(f"  {label:>{width}}" for label in self.labels)
        rows = [header]
        for label, row in zip(self.labels, self.counts):
            rows.append(label.ljust(width) + "".join(f"  {int(count):>{width}}" for count in row))
        return "\n".join(rows) + "\n"

    def to_dict(self) -> Dict:
        return {"labels": list(self.labels), "counts": self.counts.astype(int).tolist()}


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    """Scores of one system on one gold set."""

    per_class: Dict[str, ClassMetrics]
    macro_f1: float
    accuracy: float
    confusion: ConfusionMatrix

    def to_dict(self, rounded: bool = True) -> Dict:
        """JSON-ready form; scores are rounded half away from zero unless rounded is False."""
        fmt = round_half_away if rounded else float
        return {
            "macro_f1": fmt(self.macro_f1),
            "accuracy": fmt(self.accuracy),
            "per_class": {
                label: {
                    "precision": fmt(m.precision),
                    "recall": fmt(m.recall),
                    "f1": fmt(m.f1),
                    "support": m.support,
                }
                for label, m in self.per_class.items()
            },
            "confusion": self.confusion.to_dict(),
        }


def infer_labels(*label_lists: Sequence[str]) -> Tuple[str, ...]:
    """The subtask class order containing every observed label."""
    observed = set().union(*(set(labels) for labels in label_lists))
    for classes in SUBTASK_LABELS.values():
        if observed <= set(classes):
            return classes
    raise DataFormatError(f"Labels {sorted(observed)} do not belong to a single subtask")


def confusion(gold: Sequence[str], pred: Sequence[str],
              labels: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    """Count gold/predicted pairs; labels default to the subtask inferred from the data."""
    if len(gold) != len(pred):
        raise DataFormatError(f"Gold has {len(gold)} labels but predictions have {len(pred)}")
    labels = tuple(labels) if labels is not None else infer_labels(gold, pred)
    unknown = (set(gold) | set(pred)) - set(labels)
    if unknown:
        raise DataFormatError(f"Labels {sorted(unknown)} are not in the class set {labels}")
    if not gold:
        return ConfusionMatrix(labels, np.zeros((len(labels), len(labels)), dtype=np.int64))
    counts = confusion_matrix(list(gold), list(pred), labels=list(labels))
    return ConfusionMatrix(labels, counts.astype(np.int64))


def _ratio(numerator: float, denominator: float) -> float:
    # undefined precision/recall counts as 0
    return float(numerator) / float(denominator) if denominator else 0.0


def report(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class precision/recall/F1, macro-F1 and accuracy from a confusion matrix."""
    counts = cm.counts
    if counts.size == 0 or cm.total == 0:
        raise DataFormatError("Cannot report metrics of an empty confusion matrix")
    per_class = {}
    for i, label in enumerate(cm.labels):
        true_positive = counts[i, i]
        precision = _ratio(true_positive, counts[:, i].sum())
        recall = _ratio(true_positive, counts[i, :].sum())
        f1 = _ratio(2 * precision * recall, precision + recall)
        per_class[label] = ClassMetrics(precision, recall, f1, int(counts[i, :].sum()))
    macro_f1 = float(np.mean([m.f1 for m in per_class.values()]))
    accuracy = _ratio(np.trace(counts), cm.total)
    return MetricsReport(per_class, macro_f1, accuracy, cm)


def trivial_baseline(gold: Sequence[str], constant: str,
                     labels: Optional[Sequence[str]] = None) -> MetricsReport:
    """Report for predicting `constant` for every example."""
    labels = tuple(labels) if labels is not None else infer_labels(gold, [constant])
    if constant not in labels:
        raise DataFormatError(f"{constant} is not in the class set {labels}")
    return report(confusion(gold, [constant] * len(gold), labels))


def all_trivial_baselines(gold: Sequence[str], labels: Optional[Sequence[str]] = None) -> Dict[str, MetricsReport]:
    """One constant-prediction report per class, named All NOT, All OFF and so on."""
    labels = tuple(labels) if labels is not None else infer_labels(gold)
    return {f"All {label}": trivial_baseline(gold, label, labels) for label in labels}


def write_report(path: str, metrics: MetricsReport, baselines: Optional[Dict[str, MetricsReport]] = None) -> None:
    """Write metrics (and any baselines) as sorted, indented JSON."""
    payload = metrics.to_dict()
    if baselines:
        payload["baselines"] = {name: b.to_dict() for name, b in baselines.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info(f"Wrote metrics to {path}")


def render_table(rows: Dict[str, MetricsReport]) -> str:
    """`System | Macro F1 | Accuracy` table with 4-decimal values."""
    width = max(len("System"), *(len(name) for name in rows))
    lines = [f"{'System'.ljust(width)}  Macro F1  Accuracy"]
    for name, metrics in rows.items():
        lines.append(f"{name.ljust(width)}  {round_half_away(metrics.macro_f1):.4f}    "
                     f"{round_half_away(metrics.accuracy):.4f}")
    return "\n".join(lines) + "\n"


def render_details(metrics: MetricsReport) -> str:
    """`class | Precision | Recall | F1-score` table."""
    lines = ["       Precision  Recall  F1-score"]
    for label, m in metrics.per_class.items():
        lines.append(f"{label:<5}  {round_half_away(m.precision):.4f}     {round_half_away(m.recall):.4f}  "
                     f"{round_half_away(m.f1):.4f}")
    return "\n".join(lines) + "\n"
