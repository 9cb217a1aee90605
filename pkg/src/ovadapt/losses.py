"""Training losses and their analytic gradients.

Three components:

* closed-set cross-entropy on labeled source samples,
* the one-vs-all open-set loss with hard-negative sampling: each sample
  updates only its positive-class head and the single negative head with the
  highest known probability (an all-negatives variant exists purely as an
  ablation flag),
* open-set entropy on unlabeled target samples: the mean binary entropy of
  all per-class heads, whose minimization pushes each target sample
  confidently toward known or unknown.

All gradients are derived by hand through each head's two-way softmax and
returned at the logits, ready for ``model.backward``. Probabilities entering
a log are clamped; gradients are zeroed wherever the clamp is active so the
analytic gradient is the exact derivative of the implemented value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .model import ForwardResult, ModelParams
from .numerics import clamp_prob, softmax, PROB_CEIL, PROB_FLOOR


@dataclass
class LossValue:
    """A scalar loss with its gradient at the logits that produced it."""

    value: float
    grad_wrt_logits: np.ndarray
    hard_negative_index: int | np.ndarray | None = None


def _grad_mask(p: np.ndarray) -> np.ndarray:
    return (p > PROB_FLOOR) & (p < PROB_CEIL)


def closed_loss(closed_logits: np.ndarray, labels: np.ndarray) -> LossValue:
    """Mean cross-entropy of the closed-set head over a batch.

    Gradient is (softmax - onehot) / batch, with saturated rows (true-class
    probability outside the clamp range) contributing zero gradient.
    """
    logits = np.asarray(closed_logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError(f"closed_loss: expected non-empty batch, got {logits.shape}")
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise ValueError("closed_loss: labels must align with the batch")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(
            f"closed_loss: label out of range [0, {n_classes}): "
            f"min={labels.min()}, max={labels.max()}"
        )
    probs = softmax(logits, axis=1)
    p_true = probs[np.arange(batch), labels]
    value = float(np.mean(-np.log(clamp_prob(p_true))))
    grad = probs.copy()
    grad[np.arange(batch), labels] -= 1.0
    grad *= _grad_mask(p_true)[:, None]
    grad /= batch
    return LossValue(value=value, grad_wrt_logits=grad)


def ova_loss_hncs(known_prob_row: np.ndarray, label: int) -> LossValue:
    """Open-set loss for one sample: positive head plus hardest negative head.

    value = -log p(known for the true class) - log(1 - p(known for the
    negative class with the highest known probability)). Ties among negatives
    break to the lowest class index. The gradient (shape (C, 2)) is nonzero
    only at those two heads.
    """
    p = clamp_prob(np.asarray(known_prob_row, dtype=np.float64))
    n_classes = p.shape[0]
    if p.ndim != 1 or n_classes < 2:
        raise ValueError(
            f"ova_loss_hncs: need a probability row over >= 2 classes, got shape {p.shape}"
        )
    label = int(label)
    if not 0 <= label < n_classes:
        raise ValueError(f"ova_loss_hncs: label {label} out of range [0, {n_classes})")

    masked = p.copy()
    masked[label] = -np.inf
    hard = int(np.argmax(masked))  # first occurrence wins ties

    value = float(-np.log(p[label]) - np.log(1.0 - p[hard]))
    mask = _grad_mask(p)
    grad = np.zeros((n_classes, 2))
    # d(-log p)/dz = [p - 1, 1 - p]; d(-log(1-p))/dz = [p, -p]
    grad[label, 0] = (p[label] - 1.0) * mask[label]
    grad[label, 1] = (1.0 - p[label]) * mask[label]
    grad[hard, 0] = p[hard] * mask[hard]
    grad[hard, 1] = -p[hard] * mask[hard]
    return LossValue(value=value, grad_wrt_logits=grad, hard_negative_index=hard)


def ova_loss_batch(
    known_probs: np.ndarray,
    labels: np.ndarray,
    hncs: bool = True,
    grad_mask: np.ndarray | None = None,
) -> LossValue:
    """Batch-mean open-set loss with gradients at the (B, C, 2) head logits.

    hncs=True pairs each sample with its single hardest negative; hncs=False
    is the ablation-only all-negatives variant, averaging -log(1-p) over the
    C-1 negative heads so its magnitude stays comparable.
    """
    p = clamp_prob(np.asarray(known_probs, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError(f"ova_loss_batch: expected non-empty (B, C), got {p.shape}")
    batch, n_classes = p.shape
    if n_classes < 2:
        raise ValueError("ova_loss_batch: need at least 2 classes")
    if labels.shape != (batch,) or labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("ova_loss_batch: bad labels")
    mask = _grad_mask(p) if grad_mask is None else grad_mask

    rows = np.arange(batch)
    p_pos = p[rows, labels]
    grad = np.zeros((batch, n_classes, 2))
    grad[rows, labels, 0] = (p_pos - 1.0) * mask[rows, labels]
    grad[rows, labels, 1] = (1.0 - p_pos) * mask[rows, labels]

    if hncs:
        masked = p.copy()
        masked[rows, labels] = -np.inf
        hard = np.argmax(masked, axis=1)
        p_hard = p[rows, hard]
        value = float(np.mean(-np.log(p_pos) - np.log(1.0 - p_hard)))
        grad[rows, hard, 0] = p_hard * mask[rows, hard]
        grad[rows, hard, 1] = -p_hard * mask[rows, hard]
        hard_idx: np.ndarray | None = hard
    else:
        neg = np.ones_like(p, dtype=bool)
        neg[rows, labels] = False
        neg_term = np.where(neg, -np.log(1.0 - p), 0.0).sum(axis=1) / (n_classes - 1)
        value = float(np.mean(-np.log(p_pos) + neg_term))
        w = neg * mask / (n_classes - 1)
        grad[:, :, 0] += w * p
        grad[:, :, 1] -= w * p
        hard_idx = None

    grad /= batch
    return LossValue(value=value, grad_wrt_logits=grad, hard_negative_index=hard_idx)


def oem_loss(known_prob_row: np.ndarray) -> LossValue:
    """Mean binary entropy of all per-class heads for one sample.

    Bounded in [0, log 2]; maximal iff every head sits at p = 0.5. The
    gradient at head j is (1/C) * log((1-p_j)/p_j) * p_j(1-p_j) on the known
    logit and its negation on the unknown logit.
    """
    p = clamp_prob(np.asarray(known_prob_row, dtype=np.float64))
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"oem_loss: need a non-empty probability row, got shape {p.shape}")
    n_classes = p.shape[0]
    value = float(np.mean(-p * np.log(p) - (1.0 - p) * np.log(1.0 - p)))
    dh_dz0 = np.log((1.0 - p) / p) * p * (1.0 - p) * _grad_mask(p) / n_classes
    grad = np.stack([dh_dz0, -dh_dz0], axis=1)
    return LossValue(value=value, grad_wrt_logits=grad)


def oem_loss_batch(
    known_probs: np.ndarray,
    mean_over_classes: bool = True,
    grad_mask: np.ndarray | None = None,
) -> LossValue:
    """Batch-mean open-set entropy with gradients at the (B, C, 2) logits.

    mean_over_classes=False restores the summed-over-heads variant; the mean
    is the default so the entropy weight keeps its meaning as the class
    count changes.
    """
    p = clamp_prob(np.asarray(known_probs, dtype=np.float64))
    if p.ndim != 2 or p.shape[0] == 0 or p.shape[1] == 0:
        raise ValueError(f"oem_loss_batch: expected non-empty (B, C), got {p.shape}")
    batch, n_classes = p.shape
    mask = _grad_mask(p) if grad_mask is None else grad_mask
    denom = n_classes if mean_over_classes else 1
    ent = -p * np.log(p) - (1.0 - p) * np.log(1.0 - p)
    value = float(np.mean(ent.sum(axis=1) / denom))
    dh_dz0 = np.log((1.0 - p) / p) * p * (1.0 - p) * mask / (denom * batch)
    grad = np.stack([dh_dz0, -dh_dz0], axis=2)
    return LossValue(value=value, grad_wrt_logits=grad)


@dataclass
class TotalObjective:
    """Combined objective value, its components, and parameter gradients."""

    value: float
    l_cls: float
    l_ova: float
    l_ent: float
    grads: ModelParams
    hard_negative_indices: np.ndarray | None


def total_objective(
    params: ModelParams,
    src_forward: ForwardResult,
    src_labels: np.ndarray,
    tgt_forward: ForwardResult | None,
    lam: float,
    hncs: bool = True,
    oem_mean: bool = True,
) -> TotalObjective:
    """source mean of (closed + open-set loss) plus lam * target entropy mean.

    Gradients from all three components accumulate into one parameter tree
    (both heads share the extractor). tgt_forward may be None when no target
    term is wanted; with lam = 0 the entropy is still reported but target
    parameters receive exactly zero gradient.
    """
    if lam < 0:
        raise ValueError(f"total_objective: lam must be >= 0, got {lam}")
    cls_part = closed_loss(src_forward.closed_logits, src_labels)
    ova_part = ova_loss_batch(
        src_forward.ova_known_prob, src_labels, hncs=hncs, grad_mask=src_forward.ova_grad_mask
    )
    grads = model_mod.backward(
        params, src_forward, cls_part.grad_wrt_logits, ova_part.grad_wrt_logits
    )

    l_ent = 0.0
    if tgt_forward is not None:
        ent_part = oem_loss_batch(
            tgt_forward.ova_known_prob,
            mean_over_classes=oem_mean,
            grad_mask=tgt_forward.ova_grad_mask,
        )
        l_ent = ent_part.value
        if lam != 0.0:
            tgt_grads = model_mod.backward(
                params, tgt_forward, None, ent_part.grad_wrt_logits
            )
            model_mod.add_params(grads, tgt_grads, scale=lam)

    value = cls_part.value + ova_part.value + lam * l_ent
    return TotalObjective(
        value=value,
        l_cls=cls_part.value,
        l_ova=ova_part.value,
        l_ent=l_ent,
        grads=grads,
        hard_negative_indices=ova_part.hard_negative_index,
    )
