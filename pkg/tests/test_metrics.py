import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrtumor.errors import DimensionMismatch, EmptyCounts, NoNegatives, NoPositives
from mrtumor.metrics import ConfusionCounts, accuracy, dice, fmt_percent, sensitivity, specificity


def test_stage_one_counts_give_the_reported_rates():
    # 50 abnormal + 50 normal test patients reproduce 92 / 90 / 94 percent
    c = ConfusionCounts(tp=45, fn=5, tn=47, fp=3)
    assert fmt_percent(accuracy(c)) == "92.00%"
    assert fmt_percent(sensitivity(c)) == "90.00%"
    assert fmt_percent(specificity(c)) == "94.00%"


def test_extremes():
    assert accuracy(ConfusionCounts(3, 0, 4, 0)) == 100.0
    assert accuracy(ConfusionCounts(0, 3, 0, 4)) == 0.0
    assert sensitivity(ConfusionCounts(tp=0, fn=4)) == 0.0
    assert sensitivity(ConfusionCounts(tp=4, fn=0)) == 100.0
    assert specificity(ConfusionCounts(tn=5, fp=0)) == 100.0
    assert specificity(ConfusionCounts(tn=0, fp=5)) == 0.0


def test_empty_denominators_raise():
    with pytest.raises(EmptyCounts):
        accuracy(ConfusionCounts())
    with pytest.raises(NoPositives):
        sensitivity(ConfusionCounts(tn=3))
    with pytest.raises(NoNegatives):
        specificity(ConfusionCounts(tp=3))
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1)


def test_counts_from_labels():
    c = ConfusionCounts.from_labels([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert (c.tp, c.fn, c.tn, c.fp) == (2, 1, 1, 1)
    with pytest.raises(DimensionMismatch):
        ConfusionCounts.from_labels([1], [1, 0])


counts = st.tuples(*[st.integers(0, 500)] * 4).filter(lambda t: t[0] + t[1] > 0 and t[2] + t[3] > 0)


@given(counts)
def test_accuracy_lies_between_sensitivity_and_specificity(t):
    c = ConfusionCounts(*t)
    lo, hi = sorted((sensitivity(c), specificity(c)))
    assert lo - 1e-9 <= accuracy(c) <= hi + 1e-9
    # and is exactly the prevalence-weighted combination
    pos, neg = c.tp + c.fn, c.tn + c.fp
    assert accuracy(c) == pytest.approx((pos * sensitivity(c) + neg * specificity(c)) / (pos + neg))


@given(counts, st.integers(1, 50))
def test_rates_invariant_under_count_scaling(t, k):
    a, b = ConfusionCounts(*t), ConfusionCounts(*(k * v for v in t))
    assert (accuracy(a), sensitivity(a), specificity(a)) == (accuracy(b), sensitivity(b), specificity(b))


def test_dice_cases():
    m = np.zeros((8, 8), dtype=bool)
    m[2:4, 2:4] = True
    assert dice(m, m) == 1.0
    assert dice(m, np.roll(m, 4, axis=1)) == 0.0
    assert dice(np.zeros((8, 8)), np.zeros((8, 8))) == 1.0
    with pytest.raises(DimensionMismatch):
        dice(m, np.zeros((4, 4)))


def test_dice_half_overlap_by_counting():
    a = np.zeros((10, 10), dtype=bool)
    b = np.zeros((10, 10), dtype=bool)
    a[0:4, 0:4] = True  # 16 cells
    b[0:4, 2:6] = True  # 16 cells, 8 shared
    shared = int((a & b).sum())
    assert shared == 8
    assert dice(a, b) == 2 * shared / (a.sum() + b.sum()) == 0.5
