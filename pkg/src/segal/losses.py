"""Training losses: supervised CE, confidence-weighted pseudo-label CE, and
the per-image high-confidence ratio that gates the unsupervised terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidArgumentError
from .models import forward


@dataclass
class PseudoLabelMap:
    """Teacher argmax class per pixel plus its max softmax probability.

    Ties go to the lowest class index; confidence is bounded below by 1/K.
    """

    labels: np.ndarray      # (H,W) or (B,H,W) int64
    confidence: np.ndarray  # same spatial shape, float32 in [1/K, 1]


def pseudo_label(teacher: torch.nn.Module, weak_images: torch.Tensor) -> PseudoLabelMap:
    """Predict pseudo labels on weak views with the teacher in eval mode."""
    logits = forward(teacher, weak_images, train=False)
    probs = torch.softmax(logits, dim=1)
    conf, labels = probs.max(dim=1)
    return PseudoLabelMap(labels=labels.cpu().numpy().astype(np.int64),
                          confidence=conf.cpu().numpy().astype(np.float32))


def eta(confidence: np.ndarray, tau: float, valid_mask: np.ndarray) -> float:
    """Share of valid pixels whose pseudo-label confidence exceeds tau.

    An image with no valid pixels contributes no unsupervised loss (returns 0).
    """
    valid = np.asarray(valid_mask, dtype=bool)
    total = int(valid.sum())
    if total == 0:
        return 0.0
    hits = int((np.asarray(confidence)[valid] > tau).sum())
    return hits / total


def supervised_loss(student_logits: torch.Tensor, labels: torch.Tensor,
                    ignore_index: int) -> torch.Tensor:
    """Mean per-pixel cross-entropy over non-ignore pixels; 0 when none are valid."""
    if student_logits.shape[0] != labels.shape[0] or student_logits.shape[2:] != labels.shape[1:]:
        raise InvalidArgumentError("logit/label shape mismatch")
    valid = labels != ignore_index
    if not bool(valid.any()):
        return student_logits.sum() * 0.0
    ce = F.cross_entropy(student_logits, labels, ignore_index=ignore_index,
                         reduction="none")
    return ce[valid].mean()


def weighted_unsup_loss(student_logits: torch.Tensor, pseudo_labels: torch.Tensor,
                        confidence: torch.Tensor, valid_mask: torch.Tensor) -> torch.Tensor:
    """Mean over valid pixels of p * CE(student softmax, pseudo label).

    Scaling each pixel's one-hot target by its teacher confidence p downweights
    uncertain pseudo labels; at p=1 this reduces to plain cross-entropy.
    """
    if student_logits.shape[2:] != pseudo_labels.shape[1:]:
        raise InvalidArgumentError("logit/pseudo-label shape mismatch")
    valid = valid_mask.bool()
    if not bool(valid.any()):
        return student_logits.sum() * 0.0
    # out-of-range codes (e.g. ignore inside revealed regions) are always
    # masked invalid; clamp keeps the dense CE computable
    k = student_logits.shape[1]
    ce = F.cross_entropy(student_logits, pseudo_labels.clamp(0, k - 1), reduction="none")
    weighted = confidence * ce
    return weighted[valid].sum() / valid.sum()


@dataclass(frozen=True)
class LossBreakdown:
    """One training step (or epoch aggregate) decomposed into its weighted terms."""

    l_sup: float
    l_unsup1: float
    l_unsup2: float
    eta1: float
    eta2: float
    l_total: float


def total_loss(l_sup: float, l_u1: float, l_u2: float,
               eta1: float, eta2: float) -> LossBreakdown:
    """Weighted total: supervised + eta1*within-batch unsup + eta2*replay unsup.

    Before the balanced mixing stream activates, callers pass eta2 = l_u2 = 0
    and the formula degenerates to the two-term form.
    """
    for name, value in (("eta1", eta1), ("eta2", eta2)):
        if not 0.0 <= value <= 1.0:
            raise InvalidArgumentError(f"{name} must be in [0,1], got {value}")
    l_total = l_sup + eta1 * l_u1 + eta2 * l_u2
    return LossBreakdown(l_sup=l_sup, l_unsup1=l_u1, l_unsup2=l_u2,
                         eta1=eta1, eta2=eta2, l_total=l_total)
