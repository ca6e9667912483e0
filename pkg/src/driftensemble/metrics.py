"""Per-sample classification metrics on the drift (positive) class."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError

__all__ = ["Confusion", "F1Result", "confusion", "f1_score"]


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def false_positive_rate(self) -> float:
        negatives = self.fp + self.tn
        return self.fp / negatives if negatives else 0.0


@dataclass(frozen=True)
class F1Result:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def confusion(pred: Sequence[int] | np.ndarray, truth: Sequence[int] | np.ndarray) -> Confusion:
    p = np.asarray(pred).astype(bool)
    t = np.asarray(truth).astype(bool)
    if p.shape != t.shape:
        raise InputError(f"length mismatch: {p.shape} vs {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return Confusion(tp, fp, int(p.size) - tp - fp - fn, fn)


def f1_score(pred: Sequence[int] | np.ndarray, truth: Sequence[int] | np.ndarray) -> F1Result:
    """Precision, recall and F1; with no predicted or no true positives the undefined parts are 0."""
    c = confusion(pred, truth)
    predicted = c.tp + c.fp
    actual = c.tp + c.fn
    precision = c.tp / predicted if predicted else 0.0
    recall = c.tp / actual if actual else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return F1Result(precision, recall, f1, degenerate=predicted == 0 or actual == 0)
