"""Training objective: per-prior matching loss plus fused classification loss.

Head semantics for the matching loss: column 1 of a head means "the input
matches this head's prior", column 0 means it does not. A disorder sample
(label 1) should match the disorder head and not the normal head, and vice
versa.

The classification loss has two conventions. ``prose_consistent`` (default)
is ordinary cross-entropy on the fused probabilities, -log y'[label].
``literal_paper`` keeps the index order of the published formula,
-label * log y'[0] - (1 - label) * log y'[1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .numerics import Tensor, add, clamp, log, mul, scale, softmax_rows, sum_all

CONVENTIONS = ("prose_consistent", "literal_paper")
PROB_CLAMP = 1e-7


def check_convention(convention):
    convention = convention.replace("-", "_")
    if convention not in CONVENTIONS:
        raise ConfigError(f"loss convention must be one of {CONVENTIONS}, got {convention!r}")
    return convention


def _labels(labels):
    arr = np.asarray(labels).reshape(-1)
    if arr.size == 0 or not np.all((arr == 0) | (arr == 1)):
        raise DataError(f"labels must be 0 or 1, got {labels!r}")
    return arr.astype(np.int64)


def _one_hot(cols, dtype):
    out = np.zeros((len(cols), 2), dtype=dtype)
    out[np.arange(len(cols)), cols] = 1.0
    return Tensor(out)


def log_probs(logits):
    return log(clamp(softmax_rows(logits), PROB_CLAMP, 1.0 - PROB_CLAMP))


def _pick_mean(logp, cols):
    return scale(sum_all(mul(logp, _one_hot(cols, logp.dtype))), -1.0 / len(cols))


def matching_loss_tensor(y_c0, y_c1, labels):
    """Batch mean of the matching loss; ``y_c0``/``y_c1`` are B x 2 logits."""
    c = _labels(labels)
    return add(_pick_mean(log_probs(y_c0), 1 - c), _pick_mean(log_probs(y_c1), c))


def classification_loss_tensor(y_prime, labels, convention="prose_consistent"):
    c = _labels(labels)
    cols = c if check_convention(convention) == "prose_consistent" else 1 - c
    return _pick_mean(log_probs(y_prime), cols)


def batch_loss(out, labels, convention="prose_consistent"):
    """(match, cls, total) tensors for a :class:`~mental_perceiver.model.BatchOutput`."""
    match = matching_loss_tensor(out.y_c0, out.y_c1, labels)
    cls = classification_loss_tensor(out.y_prime, labels, convention)
    return match, cls, add(match, cls)


@dataclass(frozen=True)
class LossBreakdown:
    match_loss: float
    cls_loss: float
    total: float
    convention: str


def _stack(outputs, attr):
    return Tensor(np.stack([getattr(o, attr) for o in outputs]))


def _as_list(output, label):
    if isinstance(output, (list, tuple)):
        return list(output), list(np.asarray(label).reshape(-1))
    return [output], [label]


def matching_loss(output, label):
    outs, labels = _as_list(output, label)
    return matching_loss_tensor(_stack(outs, "y_c0"), _stack(outs, "y_c1"), labels).item()


def classification_loss(output, label, convention="prose_consistent"):
    outs, labels = _as_list(output, label)
    return classification_loss_tensor(_stack(outs, "y_prime"), labels, convention).item()


def total_loss(output, label, convention="prose_consistent"):
    """Loss of one ClassWiseOutput, or the mean over a list of them."""
    convention = check_convention(convention)
    m = matching_loss(output, label)
    c = classification_loss(output, label, convention)
    return LossBreakdown(m, c, m + c, convention)
