"""Confusion-matrix metrics with disorder (label 1) as the positive class.

Rates are computed as exact fractions and only turned into floats for
reporting. A 0/0 precision, recall or F1 is reported as 0 and listed in
``undefined``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DataError

METRIC_ORDER = ("accuracy", "uar", "sensitivity", "specificity",
                "precision_0", "recall_0", "f1_0", "precision_1", "recall_1", "f1_1")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise DataError(f"confusion count {name} is negative")

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_predictions(cls, labels, predictions):
        y = np.asarray(labels).astype(int).reshape(-1)
        p = np.asarray(predictions).astype(int).reshape(-1)
        if y.shape != p.shape:
            raise DataError("labels and predictions differ in length")
        return cls(int(np.sum((y == 1) & (p == 1))), int(np.sum((y == 0) & (p == 1))),
                   int(np.sum((y == 1) & (p == 0))), int(np.sum((y == 0) & (p == 0))))


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return Fraction(0)
    return Fraction(num, den)


def _f1(p, r, name, undefined):
    if p + r == 0:
        undefined.append(name)
        return Fraction(0)
    return 2 * p * r / (p + r)


@dataclass
class MetricReport:
    exact: dict
    counts: ConfusionMatrix
    undefined: list = field(default_factory=list)

    def __getattr__(self, name):
        exact = self.__dict__.get("exact", {})
        if name in exact:
            return float(exact[name])
        raise AttributeError(name)

    def as_dict(self, digits=4):
        d = {k: round(float(self.exact[k]), digits) for k in METRIC_ORDER}
        d.update(tp=self.counts.tp, fp=self.counts.fp, fn=self.counts.fn, tn=self.counts.tn,
                 undefined=list(self.undefined))
        return d


def compute_metrics(cm: ConfusionMatrix) -> MetricReport:
    if cm.total < 1:
        raise DataError("confusion matrix is empty")
    und: list = []
    sens = _ratio(cm.tp, cm.tp + cm.fn, "recall_1", und)
    spec = _ratio(cm.tn, cm.tn + cm.fp, "recall_0", und)
    prec1 = _ratio(cm.tp, cm.tp + cm.fp, "precision_1", und)
    prec0 = _ratio(cm.tn, cm.tn + cm.fn, "precision_0", und)
    exact = {
        "accuracy": Fraction(cm.tp + cm.tn, cm.total),
        "sensitivity": sens,
        "specificity": spec,
        "uar": (sens + spec) / 2,
        "precision_1": prec1,
        "recall_1": sens,
        "f1_1": _f1(prec1, sens, "f1_1", und),
        "precision_0": prec0,
        "recall_0": spec,
        "f1_0": _f1(prec0, spec, "f1_0", und),
    }
    return MetricReport(exact, cm, und)


def metrics_from_predictions(labels, predictions):
    return compute_metrics(ConfusionMatrix.from_predictions(labels, predictions))


# ---------------------------------------------------------------- reporting

def report_lines(reports: dict, extra=None):
    """One JSON object per level: {"level": ..., metrics..., counts...}."""
    lines = []
    for level, rep in reports.items():
        d = {"level": level, **(extra or {}), **rep.as_dict()}
        lines.append(json.dumps(d, sort_keys=False))
    return "\n".join(lines) + "\n"


def report_table(reports: dict):
    header = f"{'level':<12}" + "".join(f"{k:>13}" for k in METRIC_ORDER)
    rows = [header, "-" * len(header)]
    for level, rep in reports.items():
        rows.append(f"{level:<12}" + "".join(f"{float(rep.exact[k]):>13.4f}"
                                              for k in METRIC_ORDER))
    return "\n".join(rows) + "\n"


def predictions_csv(rows):
    """rows: dicts with participant_id, level, p_disorder, predicted, label."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["participant_id", "level", "p_disorder", "predicted", "label"])
    for r in rows:
        w.writerow([r["participant_id"], r["level"], f"{r['p_disorder']:.6f}", r["predicted"],
                    r["label"]])
    return buf.getvalue()
