"""Accuracy, average precision, mask recovery and the metrics report."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, UndefinedMetricError

REPORT_SCHEMA_VERSION = 1


def _scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if s.size != y.size:
        raise DimensionError(f"{s.size} scores but {y.size} labels")
    if s.size == 0:
        raise UndefinedMetricError("metric of an empty set")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return s, y


def accuracy(scores, labels, threshold=0.5):
    """Fraction of samples where ``score >= threshold`` matches the label."""
    s, y = _scores_labels(scores, labels)
    return float(np.mean((s >= threshold) == (y == 1)))


def average_precision(scores, labels):
    """Non-interpolated AP: mean precision at the rank of each positive.

    Ranking is by descending score; ties keep the original sample order.
    """
    s, y = _scores_labels(scores, labels)
    if not np.any(y == 1):
        raise UndefinedMetricError("average precision needs at least one positive label")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision[hits == 1].mean())


@dataclass
class MaskRecovery:
    precision: float
    recall: float
    iou: float
    n_selected: int
    vacuous: bool = False


def mask_recovery(mask_row, truth, threshold=0.5):
    """Compare ``{i : mask[i] >= threshold}`` with the true causal index set.

    With an empty truth set recall is vacuously 1 and ``vacuous`` is set.
    """
    m = np.asarray(mask_row, dtype=np.float64).reshape(-1)
    truth = {int(i) for i in truth}
    if truth and not (0 <= min(truth) and max(truth) < m.size):
        raise DimensionError(f"truth indices outside mask of width {m.size}")
    selected = set(np.flatnonzero(m >= threshold).tolist())
    inter = len(selected & truth)
    union = len(selected | truth)
    if selected:
        precision = inter / len(selected)
    else:
        precision = 1.0 if not truth else 0.0
    recall = inter / len(truth) if truth else 1.0
    iou = inter / union if union else 1.0
    return MaskRecovery(precision, recall, iou, len(selected), vacuous=not truth)


@dataclass
class ReportRow:
    name: str
    n: int
    accuracy: float
    average_precision: float
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0


def evaluate_scores(name, scores, labels, threshold=0.5):
    s, y = _scores_labels(scores, labels)
    pred = s >= threshold
    pos = y == 1
    try:
        ap = average_precision(s, y)
    except UndefinedMetricError:
        ap = float("nan")
    return ReportRow(
        name,
        int(s.size),
        accuracy(s, y, threshold),
        ap,
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    mask: dict = None
    config: dict = field(default_factory=dict)
    seed: int = None
    notes: list = field(default_factory=list)

    @property
    def aggregate(self):
        if not self.rows:
            return {"accuracy": float("nan"), "average_precision": float("nan")}
        return {
            "accuracy": float(np.mean([r.accuracy for r in self.rows])),
            "average_precision": float(np.mean([r.average_precision for r in self.rows])),
        }

    def row(self, name):
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self):
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "seed": self.seed,
            "rows": [asdict(r) for r in self.rows],
            "aggregate": self.aggregate,
            "mask": self.mask,
            "config": self.config,
            "notes": list(self.notes),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, raw):
        if raw.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {raw.get('schema_version')!r}")
        return cls([ReportRow(**r) for r in raw["rows"]], raw.get("mask"), raw.get("config", {}),
                   raw.get("seed"), raw.get("notes", []))

    def format_table(self):
        lines = [f"{'dataset':<24}{'n':>8}{'ACC':>10}{'AP':>10}"]
        for r in self.rows:
            lines.append(f"{r.name:<24}{r.n:>8}{r.accuracy:>10.4f}{r.average_precision:>10.4f}")
        agg = self.aggregate
        lines.append(f"{'mean':<24}{'':>8}{agg['accuracy']:>10.4f}{agg['average_precision']:>10.4f}")
        if self.mask:
            lines.append(
                "mask: " + ", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                                     for k, v in self.mask.items())
            )
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)
