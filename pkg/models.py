from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from errors import DataFormatError


class Source(str, Enum):
    OLID = "OLID"
    TOXIC = "TOXIC"


# Class order is fixed: it is the index order of the model logits and the
# row/column order of every confusion matrix.
SUBTASK_LABELS: Dict[str, Tuple[str, str]] = {
    "A": ("NOT", "OFF"),
    "B": ("TIN", "UNT"),
}

LABEL_A_VALUES = SUBTASK_LABELS["A"]
LABEL_B_VALUES = SUBTASK_LABELS["B"]

TOXIC_FLAGS = ("toxic", "severe_toxic", "obscene", "threat", "insult", "identity_hate")


def labels_for(subtask: str) -> Tuple[str, str]:
    """Return the ordered class names of a subtask."""
    try:
        return SUBTASK_LABELS[subtask.upper()]
    except KeyError:
        raise DataFormatError(f"Unknown subtask: {subtask}")


@dataclass(frozen=True)
class LabeledExample:
    id: str
    text: str
    label_a: str
    label_b: Optional[str] = None
    source: Source = Source.OLID

    def __post_init__(self):
        if not self.text:
            raise DataFormatError(f"Example {self.id} has empty text")
        if self.label_a not in LABEL_A_VALUES:
            raise DataFormatError(f"Unknown subtask A label: {self.label_a}")
        if self.label_b is not None:
            if self.label_b not in LABEL_B_VALUES:
                raise DataFormatError(f"Unknown subtask B label: {self.label_b}")
            if self.label_a != "OFF":
                raise DataFormatError(f"Example {self.id} has label_b without label_a=OFF")

    def label(self, subtask: str) -> Optional[str]:
        return self.label_a if subtask.upper() == "A" else self.label_b


@dataclass(frozen=True)
class ToxicRow:
    id: str
    comment_text: str
    toxic: int
    severe_toxic: int
    obscene: int
    threat: int
    insult: int
    identity_hate: int

    @property
    def flags(self) -> Tuple[int, ...]:
        return tuple(getattr(self, name) for name in TOXIC_FLAGS)


@dataclass
class DataSplit:
    train: List[LabeledExample]
    validation: List[LabeledExample]
    seed: int


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_macro_f1: Optional[float]
    val_accuracy: Optional[float]

    def to_dict(self) -> Dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_macro_f1": self.val_macro_f1,
            "val_accuracy": self.val_accuracy,
        }


@dataclass
class TrainHistory:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    warnings: List[str] = field(default_factory=list)

    def record(self, entry: EpochRecord) -> None:
        """Append an epoch and move best_epoch if validation macro-F1 improved."""
        self.epochs.append(entry)
        if entry.val_macro_f1 is None:
            self.best_epoch = entry.epoch
            return
        best = self.best_record
        if best is None or best.val_macro_f1 is None or entry.val_macro_f1 > best.val_macro_f1:
            self.best_epoch = entry.epoch

    @property
    def best_record(self) -> Optional[EpochRecord]:
        for entry in self.epochs:
            if entry.epoch == self.best_epoch:
                return entry
        return None
