"""Per-pixel OOD scores from semantic logits and threshold selection.

Scores follow the convention higher = more anomalous:

* ``msp``: one minus the maximum softmax probability,
* ``maxlogit``: the negated maximum logit,
* ``temp``: ``msp`` computed on logits divided by a temperature (the scaling
  half of ODIN; its input perturbation needs a trained network and is not
  provided here).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ClassCatalog
from .errors import BadTemperature, NoPositives, ShapeMismatch

METHODS = ("msp", "maxlogit", "temp")
MAX_CANDIDATES = 1024


@dataclass(frozen=True, eq=False)
class ScoreMap:
    values: np.ndarray
    method: str
    temperature: Optional[float] = None


def _max_softmax(z: np.ndarray) -> np.ndarray:
    top = z.max(axis=0)
    ez = np.exp(z - top)
    return 1.0 / ez.sum(axis=0)  # exp(top - top) == 1 is the largest numerator


def ood_score(logits: np.ndarray, method: str = "msp", temperature: Optional[float] = None) -> ScoreMap:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim < 2 or z.shape[0] < 2:
        raise ShapeMismatch("logits need a leading class axis with at least two classes")
    if method == "msp":
        values = 1.0 - _max_softmax(z)
    elif method == "maxlogit":
        values = -z.max(axis=0)
    elif method == "temp":
        if temperature is None or not np.isfinite(temperature) or temperature <= 0:
            raise BadTemperature(f"temperature must be a positive finite number, got {temperature}")
        values = 1.0 - _max_softmax(z / temperature)
    else:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    return ScoreMap(values, method, temperature if method == "temp" else None)


def apply_ood_mask(semantic: np.ndarray, score: ScoreMap, tau: float, catalog: ClassCatalog) -> np.ndarray:
    semantic = np.asarray(semantic)
    if semantic.shape != score.values.shape:
        raise ShapeMismatch(f"semantic grid {semantic.shape} vs scores {score.values.shape}")
    return np.where(score.values > tau, catalog.ood_id, semantic)


def _flatten(scores: Sequence[ScoreMap], masks: Sequence[np.ndarray]):
    if len(scores) != len(masks):
        raise ShapeMismatch("need one OOD mask per score map")
    s, m = [], []
    for sm, mask in zip(scores, masks):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != sm.values.shape:
            raise ShapeMismatch(f"mask {mask.shape} vs scores {sm.values.shape}")
        s.append(sm.values.ravel())
        m.append(mask.ravel())
    return np.concatenate(s), np.concatenate(m)


def candidate_taus(values: np.ndarray, limit: int = MAX_CANDIDATES) -> np.ndarray:
    """Thresholds between consecutive distinct scores, plus one below and one at the extremes."""
    u = np.unique(values)
    if len(u) > limit - 1:
        u = np.unique(np.quantile(u, np.linspace(0.0, 1.0, limit - 1), method="inverted_cdf"))
    mids = (u[:-1] + u[1:]) / 2.0
    return np.concatenate([[u[0] - 1.0], mids, [u[-1]]])


def confusion_at(values: np.ndarray, positives: np.ndarray, taus: np.ndarray):
    """TP, FP, FN counts of ``values > tau`` against ``positives`` for each tau."""
    pos_sorted = np.sort(values[positives])
    neg_sorted = np.sort(values[~positives])
    tp = len(pos_sorted) - np.searchsorted(pos_sorted, taus, side="right")
    fp = len(neg_sorted) - np.searchsorted(neg_sorted, taus, side="right")
    fn = len(pos_sorted) - tp
    return tp, fp, fn


def objective_at(values, positives, taus, objective: str = "f1") -> np.ndarray:
    tp, fp, fn = confusion_at(values, positives, np.asarray(taus, dtype=np.float64))
    if objective == "f1":
        num, den = 2.0 * tp, 2.0 * tp + fp + fn
    elif objective == "iou":
        num, den = 1.0 * tp, 1.0 * (tp + fp + fn)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def calibrate_threshold(scores: Sequence[ScoreMap], gt_ood_masks: Sequence[np.ndarray],
                        objective: str = "f1") -> float:
    """Pick the tau maximizing pixel-level OOD detection quality; ties go to the smaller tau."""
    values, positives = _flatten(scores, gt_ood_masks)
    if not positives.any():
        raise NoPositives("calibration needs at least one OOD pixel")
    taus = candidate_taus(values)
    quality = objective_at(values, positives, taus, objective)
    return float(taus[int(np.argmax(quality))])  # candidates ascend; argmax takes the first


__all__ = [
    "METHODS", "ScoreMap", "ood_score", "apply_ood_mask", "candidate_taus", "confusion_at",
    "objective_at", "calibrate_threshold",
]
