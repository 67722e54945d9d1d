import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalmask.errors import UndefinedMetricError
from causalmask.metrics import (
    MetricsReport,
    accuracy,
    average_precision,
    evaluate_scores,
    mask_recovery,
)


def brute_force_ap(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, total = 0, Fraction(0)
    for k, i in enumerate(order, start=1):
        if labels[i] == 1:
            hits += 1
            total += Fraction(hits, k)
    return float(total / hits)


def test_accuracy_examples():
    assert accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert accuracy([0.5] * 4, [1, 1, 0, 0]) == 0.5
    assert accuracy([0.9, 0.4, 0.6], [1, 1, 0]) == pytest.approx(1 / 3, abs=1e-15)
    with pytest.raises(UndefinedMetricError):
        accuracy([], [])


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0
    assert average_precision([0.9, 0.8, 0.3], [1, 0, 1]) == pytest.approx(0.833333, abs=5e-7)
    assert average_precision([0.9, 0.8, 0.3], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)
    assert average_precision([5, 4, 3, 2, 1], [0, 0, 0, 0, 1]) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(UndefinedMetricError):
        average_precision([0.2, 0.3], [0, 0])


def test_ap_ties_follow_original_order():
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=1, max_size=50))
def test_ap_matches_brute_force_with_ties(rows):
    s, y = zip(*rows)
    if 1 not in y:
        return
    assert average_precision(s, y) == pytest.approx(brute_force_ap(s, y), rel=0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=30, unique=True), st.randoms())
def test_ap_invariances(scores, rnd):
    y = [int(rnd.random() < 0.5) for _ in scores]
    y[0] = 1
    s = np.array(scores, dtype=float) / 100
    base = average_precision(s, y)
    assert average_precision(np.exp(s) * 3 + 1, y) == base
    perm = list(range(len(s)))
    rnd.shuffle(perm)
    assert average_precision(s[perm], np.array(y)[perm]) == base
    assert accuracy(s[perm], np.array(y)[perm], 0.0) == accuracy(s, y, 0.0)


def test_mask_recovery_examples():
    truth = list(range(8))
    r = mask_recovery(np.r_[np.ones(8), np.zeros(8)], truth)
    assert (r.precision, r.recall, r.iou) == (1.0, 1.0, 1.0)
    r = mask_recovery(np.r_[np.ones(9), np.zeros(7)], truth)
    assert r.precision == pytest.approx(8 / 9) and r.recall == 1.0 and r.iou == pytest.approx(8 / 9)
    r = mask_recovery(np.zeros(16), truth)
    assert r.recall == 0.0 and r.precision == 0.0
    r = mask_recovery(np.r_[1.0, np.zeros(3)], [])
    assert r.precision == 0.0 and r.recall == 1.0 and r.vacuous
    assert mask_recovery(np.zeros(4), []).precision == 1.0


def test_report_rows_and_aggregate():
    a = evaluate_scores("a", [0.9, 0.2, 0.6, 0.4], [1, 0, 0, 1])
    assert (a.tp, a.fp, a.tn, a.fn) == (1, 1, 1, 1)
    assert a.accuracy == (a.tp + a.tn) / a.n
    b = evaluate_scores("b", [0.9, 0.1], [1, 0])
    rep = MetricsReport([a, b], seed=3)
    assert rep.aggregate["accuracy"] == (a.accuracy + b.accuracy) / 2
    assert rep.aggregate["average_precision"] == (a.average_precision + b.average_precision) / 2
    raw = json.loads(rep.to_json())
    assert raw["schema_version"] == 1
    again = MetricsReport.from_dict(raw)
    assert again.rows == rep.rows
    assert "mean" in rep.format_table()
    with pytest.raises(ValueError):
        MetricsReport.from_dict(dict(raw, schema_version=99))
