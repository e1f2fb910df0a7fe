import json
from fractions import Fraction

import numpy as np
import pytest

from mental_perceiver.errors import DataError
from mental_perceiver.metrics import (
    ConfusionMatrix, compute_metrics, metrics_from_predictions, predictions_csv, report_lines,
    report_table,
)


def direct(tp, fp, fn, tn):
    """Independent recomputation straight from the definitions."""
    def r(a, b):
        return Fraction(a, b) if b else Fraction(0)

    sens, spec = r(tp, tp + fn), r(tn, tn + fp)
    p1, p0 = r(tp, tp + fp), r(tn, tn + fn)
    f = lambda p, q: 2 * p * q / (p + q) if p + q else Fraction(0)
    return {"accuracy": Fraction(tp + tn, tp + fp + fn + tn), "sensitivity": sens,
            "specificity": spec, "uar": (sens + spec) / 2, "precision_1": p1, "recall_1": sens,
            "f1_1": f(p1, sens), "precision_0": p0, "recall_0": spec, "f1_0": f(p0, spec)}


def test_hand_counts():
    rep = compute_metrics(ConfusionMatrix(tp=3, fp=1, fn=1, tn=5))
    assert rep.exact["accuracy"] == Fraction(4, 5)
    assert rep.exact["precision_1"] == rep.exact["recall_1"] == rep.exact["f1_1"] == Fraction(3, 4)


def test_uar_from_rounded_rates():
    assert (Fraction("0.65") + Fraction("0.87")) / 2 == Fraction("0.76")


def test_no_positive_predictions():
    rep = compute_metrics(ConfusionMatrix(tp=0, fp=0, fn=4, tn=6))
    assert rep.precision_1 == 0.0
    assert "precision_1" in rep.undefined
    assert rep.as_dict()["undefined"] == rep.undefined


def test_empty_matrix():
    with pytest.raises(DataError):
        compute_metrics(ConfusionMatrix())


def test_negative_count():
    with pytest.raises(DataError):
        ConfusionMatrix(tp=-1)


def test_perfect_classifier():
    rep = metrics_from_predictions([0, 1, 1, 0, 1], [0, 1, 1, 0, 1])
    assert rep.accuracy == rep.uar == 1.0


def test_all_normal_predictions():
    rep = metrics_from_predictions([0, 1, 1, 0, 1], [0] * 5)
    assert (rep.specificity, rep.sensitivity, rep.uar) == (1.0, 0.0, 0.5)


def test_random_matrices_exact():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        counts = [int(c) for c in rng.integers(0, 30, size=4)]
        if rng.random() < 0.2:
            counts[rng.integers(0, 4)] = 0
        if sum(counts) == 0:
            counts[3] = 1
        rep = compute_metrics(ConfusionMatrix(*counts))
        assert rep.exact == direct(*counts)
        assert rep.exact["uar"] == (rep.exact["sensitivity"] + rep.exact["specificity"]) / 2
        assert 0 <= rep.exact["accuracy"] <= 1


def test_random_predictions_n200():
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, 200)
    p = rng.integers(0, 2, 200)
    tp = sum(1 for a, b in zip(y, p) if a == 1 and b == 1)
    fp = sum(1 for a, b in zip(y, p) if a == 0 and b == 1)
    fn = sum(1 for a, b in zip(y, p) if a == 1 and b == 0)
    tn = sum(1 for a, b in zip(y, p) if a == 0 and b == 0)
    assert metrics_from_predictions(y, p).exact == direct(tp, fp, fn, tn)


def test_balanced_equal_counts_acc_equals_uar():
    rep = compute_metrics(ConfusionMatrix(tp=7, fp=3, fn=3, tn=7))
    assert rep.exact["accuracy"] == rep.exact["uar"]


def test_serialisation_rounds_at_boundary():
    reps = {"participant": compute_metrics(ConfusionMatrix(1, 1, 1, 0))}
    line = json.loads(report_lines(reps, {"split": "test"}))
    assert line["level"] == "participant" and line["split"] == "test"
    assert line["accuracy"] == 0.3333
    assert "0.3333" in report_table(reps)
    csv = predictions_csv([{"participant_id": "a", "level": "participant", "p_disorder": 0.25,
                            "predicted": 0, "label": 1}])
    assert csv.splitlines() == ["participant_id,level,p_disorder,predicted,label",
                                "a,participant,0.250000,0,1"]
