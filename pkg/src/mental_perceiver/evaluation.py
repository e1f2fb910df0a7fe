"""Run a model over corpus records and score it at segment and participant level."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import MIN_TAIL_S, OVERLAP_S, WINDOW_S, aggregate_participant, segment
from .errors import ConfigError, DataError
from .metrics import MetricReport, metrics_from_predictions
from .model import decide

LEVELS = ("segment", "participant")


@dataclass
class EvalResult:
    reports: dict
    predictions: list

    def uar(self, level="participant"):
        return self.reports[level].uar


def _levels(level):
    if level in (None, "both"):
        return LEVELS
    if level not in LEVELS:
        raise ConfigError(f"level must be one of {LEVELS} or 'both', got {level!r}")
    return (level,)


def evaluate_records(model, records, level="both", window=WINDOW_S, overlap=OVERLAP_S,
                     min_tail=MIN_TAIL_S, batch_size=32):
    """Predict every segment of ``records`` and build metric reports.

    Records are processed in participant_id order so predictions are
    reproducible regardless of input order.
    """
    levels = _levels(level)
    records = sorted(records, key=lambda r: r.participant_id)
    if not records:
        raise DataError("no records to evaluate")
    segs, owner = [], []
    for i, r in enumerate(records):
        for s in segment(r, window, overlap, min_tail):
            segs.append(s)
            owner.append(i)
    probs = model.predict_batch([(s.text, s.audio) for s in segs], batch_size)
    owner = np.asarray(owner)

    rows = []
    reports: dict[str, MetricReport] = {}
    if "segment" in levels:
        preds = [decide(p) for p in probs]
        for s, p, c in zip(segs, probs, preds):
            rows.append({"participant_id": s.participant_id, "level": "segment",
                         "p_disorder": float(p[1]), "predicted": c, "label": s.label,
                         "start_s": s.start_s, "end_s": s.end_s})
        reports["segment"] = metrics_from_predictions([s.label for s in segs], preds)
    if "participant" in levels:
        labels, preds = [], []
        for i, r in enumerate(records):
            c, p = aggregate_participant(probs[owner == i])
            rows.append({"participant_id": r.participant_id, "level": "participant",
                         "p_disorder": float(p[1]), "predicted": c, "label": r.label})
            labels.append(r.label)
            preds.append(c)
        reports["participant"] = metrics_from_predictions(labels, preds)
    return EvalResult(reports, rows)
