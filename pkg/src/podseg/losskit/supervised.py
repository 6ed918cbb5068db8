"""Head losses: bootstrapped weighted cross-entropy, heatmap MSE, masked offset L1."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp, softmax

from ..errors import ShapeMismatch
from .config import LossConfig


@dataclass(frozen=True, eq=False)
class HeadPredictions:
    semantic_logits: np.ndarray  # (K, *S)
    center_heatmap: np.ndarray  # S
    offsets: np.ndarray  # (2, *S)


@dataclass(frozen=True, eq=False)
class HeadTargets:
    labels: np.ndarray  # S, channel index or -1 for ignored pixels
    heatmap: np.ndarray  # S, Gaussian-encoded centers
    offsets: np.ndarray  # (2, *S)
    offset_mask: np.ndarray  # S, True on thing/OOD pixels
    weights: Optional[np.ndarray] = None  # S, per-pixel CE weights (ones if omitted)


@dataclass(frozen=True, eq=False)
class SupervisedResult:
    sem: float
    cp: float
    cr: float
    grad_logits: np.ndarray
    grad_heatmap: np.ndarray
    grad_offsets: np.ndarray
    cr_empty: bool
    # Gap between the last kept and first dropped weighted pixel loss; tiny gaps sit on a kink.
    bootstrap_gap: float


def bootstrap_count(n_valid: int, fraction: float) -> int:
    return max(1, int(math.floor(fraction * n_valid + 1e-9)))


def bootstrapped_ce(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray, fraction: float):
    """Mean of the hardest ``fraction`` weighted per-pixel CE terms; returns (loss, grad, gap)."""
    k_ch = logits.shape[0]
    z = logits.reshape(k_ch, -1)
    lab = labels.reshape(-1)
    w = weights.reshape(-1)
    valid = np.flatnonzero(lab >= 0)
    grad = np.zeros_like(z)
    if valid.size == 0:
        return 0.0, grad.reshape(logits.shape), math.inf
    zv = z[:, valid]
    ce = logsumexp(zv, axis=0) - zv[lab[valid], np.arange(valid.size)]
    wl = w[valid] * ce
    k = bootstrap_count(valid.size, fraction)
    order = np.argsort(-wl, kind="stable")
    top = order[:k]
    gap = float(wl[order[k - 1]] - wl[order[k]]) if k < valid.size else math.inf
    loss = float(np.mean(wl[top]))
    p = softmax(zv[:, top], axis=0)
    p[lab[valid[top]], np.arange(k)] -= 1.0
    grad[:, valid[top]] = p * (w[valid[top]] / k)[None, :]
    return loss, grad.reshape(logits.shape), gap


def supervised_losses(pred: HeadPredictions, target: HeadTargets, cfg: LossConfig = LossConfig()) -> SupervisedResult:
    logits = np.asarray(pred.semantic_logits, dtype=np.float64)
    heat = np.asarray(pred.center_heatmap, dtype=np.float64)
    offs = np.asarray(pred.offsets, dtype=np.float64)
    labels = np.asarray(target.labels, dtype=np.int64)
    t_heat = np.asarray(target.heatmap, dtype=np.float64)
    t_offs = np.asarray(target.offsets, dtype=np.float64)
    mask = np.asarray(target.offset_mask, dtype=bool)
    weights = np.ones(labels.shape) if target.weights is None else np.asarray(target.weights, dtype=np.float64)
    spatial = heat.shape
    if (logits.shape[1:] != spatial or labels.shape != spatial or t_heat.shape != spatial
            or offs.shape != (2,) + spatial or t_offs.shape != offs.shape
            or mask.shape != spatial or weights.shape != spatial):
        raise ShapeMismatch("prediction and target shapes disagree")
    if labels.max(initial=-1) >= logits.shape[0]:
        raise ShapeMismatch("label index exceeds the number of logit channels")

    sem, g_logits, gap = bootstrapped_ce(logits, labels, weights, cfg.bootstrap_fraction)

    resid = heat - t_heat
    cp = float(np.mean(resid**2))
    g_heat = 2.0 * resid / resid.size

    n_mask = int(mask.sum())
    g_offs = np.zeros_like(offs)
    if n_mask == 0:
        cr = 0.0
    else:
        d = (offs - t_offs) * mask[None]
        cr = float(np.sum(np.abs(d)) / n_mask)
        g_offs = np.sign(d) / n_mask
    return SupervisedResult(sem, cp, cr, g_logits, g_heat, g_offs, n_mask == 0, gap)
