"""Pair classification, cross-modal contrastive, and frame-order losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    add,
    as_column,
    concat,
    log_expdiff,
    log_softmax,
    logsumexp,
    matmul,
    multiply,
    neg,
    rowsum,
    scale,
    sub,
    tmean,
    transpose,
)

__all__ = [
    "LossWeights",
    "cross_entropy",
    "loss_cls",
    "loss_cont",
    "loss_ord",
    "joint_loss",
    "NUM_ORDER_CLASSES",
]

NUM_ORDER_CLASSES = 12
CONT_FLOOR = 1e-8


@dataclass
class LossWeights:
    cls_weight: float = 1.0
    cont_weight: float = 1.0
    ord_weight: float = 1.0

    def __post_init__(self):
        for name in ("cls_weight", "cont_weight", "ord_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def _cross_entropy(logits: Tensor, targets, num_classes: int, name: str) -> Tensor:
    t = np.asarray(targets)
    if logits.data.ndim != 2 or logits.shape[1] != num_classes:
        raise ValueError(f"{name}: expected (N,{num_classes}) logits, got {logits.shape}")
    if t.ndim != 1 or len(t) != logits.shape[0]:
        raise ValueError(f"{name}: {len(t)} targets for {logits.shape[0]} rows")
    if len(t) == 0:
        raise ValueError(f"{name}: empty batch")
    if t.min() < 0 or t.max() >= num_classes:
        raise ValueError(f"{name}: target outside [0,{num_classes})")
    onehot = np.zeros(logits.shape, dtype=logits.data.dtype)
    onehot[np.arange(len(t)), t] = 1.0
    picked = rowsum(multiply(log_softmax(logits), Tensor(onehot)))
    return neg(tmean(picked))


def cross_entropy(logits: Tensor, targets, num_classes: int) -> Tensor:
    """Mean softmax cross-entropy for an arbitrary class count."""
    return _cross_entropy(logits, targets, num_classes, "cross_entropy")


def loss_cls(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy for correlated/uncorrelated pair logits."""
    return _cross_entropy(logits, labels, 2, "loss_cls")


def loss_ord(logits: Tensor, classes) -> Tensor:
    """Mean cross-entropy over the 12 reversal-invariant order classes."""
    return _cross_entropy(logits, classes, NUM_ORDER_CLASSES, "loss_ord")


def loss_cont(y_v: Tensor, y_s: Tensor, y_s_neg: Tensor) -> Tensor:
    """Hard-negative contrastive loss over projected embeddings.

    Per anchor ``i`` with similarity ``sim(a,b) = a . b``::

        numerator_i   = max(exp(sim(yv_i, ys_i)) - exp(sim(yv_i, ysneg_i)), 1e-8)
        denominator_i = sum_k exp(sim(yv_i, ys_k)) + exp(sim(yv_i, ysneg_i))
        loss          = mean_i -log(numerator_i / denominator_i)

    The anchor's own video embedding never enters the denominator; the sum
    runs over every in-batch speech embedding plus the anchor's own hard
    negative.  Computed in the log domain so large similarities stay
    finite; the numerator clamp kills the gradient only on the floor.
    """
    if y_v.data.ndim != 2 or y_v.shape != y_s.shape or y_v.shape != y_s_neg.shape:
        raise ValueError(
            f"loss_cont: expected matching (N,P) embeddings, got "
            f"{y_v.shape}, {y_s.shape}, {y_s_neg.shape}"
        )
    if y_v.shape[0] < 1:
        raise ValueError("loss_cont: empty batch")
    for name, t in (("y_v", y_v), ("y_s", y_s), ("y_s_neg", y_s_neg)):
        if not np.all(np.isfinite(t.data)):
            raise ValueError(f"loss_cont: non-finite values in {name}")
    sims = matmul(y_v, transpose(y_s))                 # (N, N) anchor x speech
    pos = rowsum(multiply(y_v, y_s))                   # (N,) diagonal of sims
    hard = rowsum(multiply(y_v, y_s_neg))              # (N,)
    log_den = logsumexp(concat([sims, as_column(hard)]))
    log_num = log_expdiff(pos, hard, floor=CONT_FLOOR)
    rows = sub(log_den, log_num)
    # An anchor on the clamp floor has no numerator gradient, so descending
    # the denominator alone would just shrink every similarity together, an
    # unbounded direction that empties the batch of signal.  Steer floored
    # anchors by log_den - pos instead (value untouched): that is the
    # limiting direction of the unclamped loss and it pulls the positive
    # past the hard negative, exactly what a floored pair needs.  Half the
    # batch starts on the floor, so these rows cannot be left inert.
    with np.errstate(over="ignore", invalid="ignore"):
        off_floor = (np.exp(pos.data) - np.exp(hard.data)) > CONT_FLOOR
    if not off_floor.all():
        floored = Tensor((1.0 - off_floor).astype(rows.data.dtype))
        steer = multiply(pos, floored)
        rows = add(rows, sub(Tensor(steer.data.copy()), steer))
    return tmean(rows)


def joint_loss(l_cls, l_cont, l_ord, weights: LossWeights) -> Tensor:
    """Weighted sum of the three components; absent ones are passed as 0."""
    total = None
    for term, w in ((l_cls, weights.cls_weight), (l_cont, weights.cont_weight), (l_ord, weights.ord_weight)):
        if not isinstance(term, Tensor):
            if float(term) != 0.0:
                raise ValueError("joint_loss: non-Tensor component must be 0")
            continue
        piece = scale(term, w)
        total = piece if total is None else total + piece
    if total is None:
        total = Tensor(np.zeros((), dtype=np.float32))
    return total
