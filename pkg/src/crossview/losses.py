"""Loss functions with fused backward passes."""

from __future__ import annotations

import numpy as np

from .data import LabelState
from .errors import DegenerateInputError, DimensionError
from .tensor import Tensor, make_node


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e))


def weighted_bce(logits: Tensor, labels, class_weights=(1.0, 1.0)) -> Tensor:
    """Mean over the batch of ``-w_y (y log p + (1-y) log(1-p))`` with ``p = sigmoid(logit)``.

    Works in logit space, so saturated probabilities never produce infinities.
    ``class_weights`` is ``(w_negative, w_positive)``.
    """
    z = logits.data.reshape(-1)
    y = np.asarray(labels, dtype=z.dtype).reshape(-1)
    if y.shape != z.shape:
        raise DimensionError(f"weighted_bce: {z.shape[0]} logits vs {y.shape[0]} labels")
    cw = np.asarray(class_weights, dtype=z.dtype)
    w = np.where(y > 0.5, cw[1], cw[0])
    n = max(len(z), 1)
    loss = (w * (_softplus(z) - y * z)).sum() / n

    def backward(g):
        return ((g * w * (_sigmoid(z) - y) / n).reshape(logits.shape),)

    return make_node(np.asarray(loss, dtype=z.dtype), (logits,), backward, "weighted_bce")


def masked_multitask_ce(task_logits: Tensor, states) -> Tensor:
    """Three-class cross-entropy per task over samples whose state is known.

    Each task's loss is the mean over its known samples; the result is the
    mean over tasks that have at least one known sample. Unknown entries get
    exactly zero gradient.
    """
    z = task_logits.data
    states = np.asarray(states)
    if z.ndim != 3 or z.shape[2] != 3 or states.shape != z.shape[:2]:
        raise DimensionError(f"masked_multitask_ce: logits {z.shape} vs states {states.shape}")
    known = states != LabelState.UNKNOWN
    counts = known.sum(axis=0)
    active = counts > 0
    if not active.any():
        raise DegenerateInputError("every task is unknown for the whole batch")
    shifted = z - z.max(axis=2, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=2, keepdims=True))
    logp = shifted - logsum
    target = np.where(known, states, 0)
    picked = np.take_along_axis(logp, target[..., None], axis=2)[..., 0]
    # per-entry weight: 1 / (known count of its task * number of active tasks)
    weight = np.where(known, 1.0 / np.maximum(counts, 1)[None, :], 0.0) / active.sum()
    weight = weight.astype(z.dtype)
    loss = -(weight * picked).sum()

    def backward(g):
        probs = np.exp(logp)
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, target[..., None], 1.0, axis=2)
        return (g * weight[..., None] * (probs - onehot),)

    return make_node(np.asarray(loss, dtype=z.dtype), (task_logits,), backward, "masked_multitask_ce")
