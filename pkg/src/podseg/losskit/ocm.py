"""Loss for the OOD contextual module: image-level BCE plus two gated pixel-wise CE terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp, softmax

from ..errors import ShapeMismatch
from .config import LossConfig


@dataclass(frozen=True, eq=False)
class OcmResult:
    loss: float
    bce: float
    ce_a: float
    ce_b: float
    grad_class_logit: float
    grad_seg_a: np.ndarray
    grad_seg_b: np.ndarray


def bce_with_logit(z: float, target: float):
    loss = float(np.logaddexp(0.0, z) - target * z)
    return loss, float(expit(z) - target)


def pixel_ce(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over pixels of a (2, *S) in/out logit map and its gradient."""
    if logits.ndim < 2 or logits.shape[0] != 2 or logits.shape[1:] != labels.shape:
        raise ShapeMismatch(f"seg logits {logits.shape} vs labels {labels.shape}")
    z = logits.reshape(2, -1)
    lab = labels.reshape(-1).astype(np.int64)
    if np.any((lab != 0) & (lab != 1)):
        raise ValueError("in/out labels must be binary")
    n = lab.size
    ce = logsumexp(z, axis=0) - z[lab, np.arange(n)]
    g = softmax(z, axis=0)
    g[lab, np.arange(n)] -= 1.0
    return float(ce.mean()), (g / n).reshape(logits.shape)


def ocm_loss(class_logit: float, has_ood: int, seg_logits_a: np.ndarray, seg_logits_b: np.ndarray,
             labels_a: np.ndarray, labels_b: np.ndarray, cfg: LossConfig = LossConfig()) -> OcmResult:
    """BCE(class) + wa*CE(seg_a) + wb*CE(seg_b); the CE terms and their gradients vanish without OOD."""
    if has_ood not in (0, 1):
        raise ValueError("has_ood must be 0 or 1")
    seg_a = np.asarray(seg_logits_a, dtype=np.float64)
    seg_b = np.asarray(seg_logits_b, dtype=np.float64)
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    bce, g_cls = bce_with_logit(float(class_logit), float(has_ood))
    if not has_ood:
        if seg_a.shape[1:] != labels_a.shape or seg_b.shape[1:] != labels_b.shape:
            raise ShapeMismatch("seg logits and labels disagree")
        return OcmResult(bce, bce, 0.0, 0.0, g_cls, np.zeros_like(seg_a), np.zeros_like(seg_b))
    ce_a, g_a = pixel_ce(seg_a, labels_a)
    ce_b, g_b = pixel_ce(seg_b, labels_b)
    loss = bce + cfg.ocm_weight_a * ce_a + cfg.ocm_weight_b * ce_b
    return OcmResult(loss, bce, ce_a, ce_b, g_cls, cfg.ocm_weight_a * g_a, cfg.ocm_weight_b * g_b)
