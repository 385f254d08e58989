"""Micro-averaged F1 and area under the precision-recall curve."""

from __future__ import annotations

import numpy as np


def micro_f1(predictions, golds, num_labels: int) -> float:
    """F1 from TP/FP/FN pooled over all classes."""
    pred = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(golds, dtype=np.int64)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gold.shape}")
    if pred.size == 0:
        raise ValueError("micro_f1 of an empty sequence")
    tp = fp = fn = 0
    for c in range(num_labels):
        tp += int(np.sum((pred == c) & (gold == c)))
        fp += int(np.sum((pred == c) & (gold != c)))
        fn += int(np.sum((pred != c) & (gold == c)))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def auc_pr(scores, golds) -> float:
    """Average precision: sum of precision at each recall step.

    Entities with equal scores are consumed as one block, so ties are not
    broken in anyone's favour.
    """
    scores = np.asarray(scores, dtype=np.float64)
    golds = np.asarray(golds).astype(bool)
    if scores.shape != golds.shape:
        raise ValueError(f"length mismatch: {scores.shape} vs {golds.shape}")
    n_pos = int(golds.sum())
    if n_pos == 0 or n_pos == golds.size:
        raise ValueError("auc_pr needs at least one positive and one negative")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], golds[order]
    # last index of each run of equal scores
    boundaries = np.flatnonzero(np.diff(s) != 0)
    ends = np.append(boundaries, s.size - 1)
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / n_pos
    d_recall = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(precision * d_recall))
