import logging
from dataclasses import dataclass
from typing import Any, Dict, Literal, Sequence, Tuple

import numpy as np
import pandas as pd

from ..data import LabeledFeatures
from ..exceptions import ContractViolation
from ..utils.persistence import digest

logger = logging.getLogger(__name__)

ALL_CLASSES = tuple(range(1, 14))


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = target class and columns = predicted class"""
    counts: np.ndarray
    classes: Tuple[int, ...] = ALL_CLASSES

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        size = len(self.classes)
        if counts.shape != (size, size):
            raise ContractViolation(f"confusion counts have shape {counts.shape}, expected ({size}, {size})")
        if np.any(counts < 0):
            raise ContractViolation("confusion counts must be nonnegative")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))

    @classmethod
    def from_predictions(
        cls, targets: Sequence[int], predicted: Sequence[int], classes: Sequence[int] = ALL_CLASSES
    ) -> "ConfusionMatrix":
        position = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for target, guess in zip(targets, predicted):
            if int(target) not in position or int(guess) not in position:
                raise ContractViolation(f"class pair ({target}, {guess}) outside {tuple(classes)}")
            counts[position[int(target)], position[int(guess)]] += 1
        return cls(counts=counts, classes=tuple(classes))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def accuracy(self) -> float:
        """Correct classifications over all classifications"""
        if self.total == 0:
            raise ContractViolation("accuracy of an empty confusion matrix")
        return float(np.trace(self.counts)) / self.total

    def percentages(self) -> np.ndarray:
        """Row-normalized percentages; rows without events stay zero"""
        totals = self.row_totals[:, None].astype(float)
        return np.divide(100.0 * self.counts, totals, out=np.zeros(self.counts.shape), where=totals > 0)

    def to_frame(self, kind: Literal["count", "percent"] = "count") -> pd.DataFrame:
        values = self.counts if kind == "count" else self.percentages()
        labels = [str(c) for c in self.classes]
        frame = pd.DataFrame(values, index=labels, columns=labels)
        frame.index.name = "target"
        return frame

    def to_csv_frame(self) -> pd.DataFrame:
        """Counts and percentages stacked, tagged by a kind column"""
        frames = []
        for kind in ("count", "percent"):
            frame = self.to_frame(kind).reset_index()
            frame.insert(0, "kind", kind)
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)

    def to_dict(self) -> Dict[str, Any]:
        return {"classes": list(self.classes), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ConfusionMatrix":
        return cls(counts=np.asarray(data["counts"]), classes=tuple(data["classes"]))

    @property
    def digest(self) -> str:
        return digest(self.to_dict())


def evaluate(model, data: LabeledFeatures) -> Tuple[float, ConfusionMatrix]:
    """Accuracy and confusion matrix of any model exposing predict_many"""
    if len(data) == 0:
        raise ContractViolation("empty evaluation set")
    predicted = model.predict_many(data.features)
    matrix = ConfusionMatrix.from_predictions(data.labels, predicted)
    logger.info(f"Evaluated {matrix.total} events: accuracy {matrix.accuracy:.4f}")
    return matrix.accuracy, matrix
