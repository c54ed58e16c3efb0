"""ROC AUC as the Mann-Whitney statistic, with half credit for ties."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import MetricUndefinedError


def auc_roc(scores, labels) -> float:
    """``(#concordant + 0.5 * #tied) / (#pos * #neg)`` via average ranks."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC needs both positive and negative samples")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pairwise(scores, labels) -> float:
    """O(n^2) reference: count concordant and tied positive/negative pairs."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    pos, neg = scores[labels], scores[~labels]
    if pos.size == 0 or neg.size == 0:
        raise MetricUndefinedError("AUC needs both positive and negative samples")
    concordant = 0
    tied = 0
    for p in pos:
        concordant += int((p > neg).sum())
        tied += int((p == neg).sum())
    return float((concordant + 0.5 * tied) / (pos.size * neg.size))
