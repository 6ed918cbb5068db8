"""Alignment-mismatch margin losses between a frozen head and a trainable head.

In-distribution pixels (y = 0) are pulled together by their distance e;
OOD pixels (y = 1) are pushed apart until e reaches the margin m:

    L = 1/(2N) * sum_i [(1 - y_i) * e_i + y_i * max(0, m - e_i)]

The semantic variant measures e as the squared L2 distance between softplus
activations, with the frozen head widened by a max-over-classes channel.
The feature variant measures e as the L1 distance between feature vectors.
Gradients are returned for the trainable side only; the hinge uses
subgradient 0 at e = m.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import expit

from ..errors import ShapeMismatch


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass(frozen=True, eq=False)
class DualHeadLogits:
    sh_in: np.ndarray  # (Nc, P), frozen
    sh_out: np.ndarray  # (Nc + 1, P)
    y: np.ndarray  # (P,), 1 marks an OOD pixel

    def __post_init__(self):
        sh_in = np.asarray(self.sh_in, dtype=np.float64)
        sh_out = np.asarray(self.sh_out, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if sh_in.ndim != 2 or sh_out.ndim != 2 or y.ndim != 1:
            raise ShapeMismatch("expected sh_in (Nc, P), sh_out (Nc+1, P), y (P,)")
        if sh_out.shape[0] != sh_in.shape[0] + 1:
            raise ShapeMismatch(f"sh_out needs exactly one more channel than sh_in: {sh_in.shape} vs {sh_out.shape}")
        if not (sh_in.shape[1] == sh_out.shape[1] == y.shape[0]):
            raise ShapeMismatch("pixel counts differ")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("y must be binary")
        object.__setattr__(self, "sh_in", sh_in)
        object.__setattr__(self, "sh_out", sh_out)
        object.__setattr__(self, "y", y)

    def augmented_in(self) -> np.ndarray:
        return np.vstack([self.sh_in, self.sh_in.max(axis=0, keepdims=True)])


@dataclass(frozen=True, eq=False)
class FeaturePair:
    x_in: np.ndarray  # (D, P), frozen
    x_out: np.ndarray  # (D, P)
    y: np.ndarray  # (P,)
    head: str = "center_pred"

    def __post_init__(self):
        x_in = np.asarray(self.x_in, dtype=np.float64)
        x_out = np.asarray(self.x_out, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x_in.shape != x_out.shape or x_in.ndim != 2 or y.shape != (x_in.shape[1],):
            raise ShapeMismatch(f"feature shapes disagree: {x_in.shape}, {x_out.shape}, {y.shape}")
        if self.head not in ("center_pred", "center_regress"):
            raise ValueError(f"unknown head {self.head!r}")
        object.__setattr__(self, "x_in", x_in)
        object.__setattr__(self, "x_out", x_out)
        object.__setattr__(self, "y", y)


def margin_combine(e: np.ndarray, y: np.ndarray, m: float) -> Tuple[float, np.ndarray]:
    """Loss from per-pixel distances and dL/de."""
    n = e.shape[0]
    active = (m - e) > 0
    loss = np.sum((1.0 - y) * e + y * np.where(active, m - e, 0.0)) / (2.0 * n)
    dl_de = ((1.0 - y) - y * active) / (2.0 * n)
    return float(loss), dl_de


def semantic_distance(d: DualHeadLogits) -> Tuple[np.ndarray, np.ndarray]:
    diff = softplus(d.augmented_in()) - softplus(d.sh_out)
    return np.sum(diff**2, axis=0), diff


def loss_s_am(d: DualHeadLogits, m: float = 50.0) -> Tuple[float, np.ndarray]:
    """Semantic alignment-mismatch loss and its gradient w.r.t. ``sh_out``."""
    e, diff = semantic_distance(d)
    loss, dl_de = margin_combine(e, d.y, m)
    # de/dsh_out = -2 * diff * sigmoid(sh_out)
    grad = dl_de[None, :] * (-2.0 * diff * expit(d.sh_out))
    return loss, grad


def loss_j_am(f: FeaturePair, m: float = 50.0) -> Tuple[float, np.ndarray]:
    """Feature-space alignment-mismatch loss and its gradient w.r.t. ``x_out``."""
    delta = f.x_out - f.x_in
    e = np.sum(np.abs(delta), axis=0)
    loss, dl_de = margin_combine(e, f.y, m)
    return loss, dl_de[None, :] * np.sign(delta)
