"""Classification rates (as percentages) and mask overlap."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyCounts, NoNegatives, NoPositives


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fn: int = 0
    tn: int = 0
    fp: int = 0

    def __post_init__(self):
        if min(self.tp, self.fn, self.tn, self.fp) < 0:
            raise ValueError(f"negative count in {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    @classmethod
    def from_labels(cls, predicted, truth) -> "ConfusionCounts":
        """Counts from paired binary labels (1 / True = abnormal)."""
        p = np.asarray(predicted).astype(bool)
        t = np.asarray(truth).astype(bool)
        if p.shape != t.shape:
            raise DimensionMismatch(f"{p.shape} vs {t.shape}")
        return cls(
            tp=int(np.sum(p & t)),
            fn=int(np.sum(~p & t)),
            tn=int(np.sum(~p & ~t)),
            fp=int(np.sum(p & ~t)),
        )


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise EmptyCounts("accuracy of an empty confusion table")
    return 100.0 * (c.tp + c.tn) / c.total


def sensitivity(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        raise NoPositives("sensitivity needs at least one abnormal case")
    return 100.0 * c.tp / (c.tp + c.fn)


def specificity(c: ConfusionCounts) -> float:
    if c.tn + c.fp == 0:
        raise NoNegatives("specificity needs at least one normal case")
    return 100.0 * c.tn / (c.tn + c.fp)


def fmt_percent(value: float) -> str:
    return f"{value:.2f}%"


def dice(mask, truth) -> float:
    """Dice overlap; two empty masks count as perfect agreement."""
    a = np.asarray(getattr(mask, "mask", mask), dtype=bool)
    b = np.asarray(truth, dtype=bool)
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask {a.shape} vs truth {b.shape}")
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / denom)
