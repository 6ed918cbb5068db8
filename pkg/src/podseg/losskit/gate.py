"""Dynamic gating between an offset-weight path and frozen base features.

    F_R = (W2 + dW2) @ relu((W1 + dW1) @ F)
    g   = sigmoid(Wh @ mean(G) + bh)
    F_O = g * F_R + (1 - g) * K

Convolutions are reduced to per-pixel dense maps (1x1 equivalents): F is
(C_f, P), K is (C_out, P) and G is (C_g, Q). The gate has either one channel
or one per output channel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from ..errors import ShapeMismatch


@dataclass(frozen=True, eq=False)
class DynamicGateInputs:
    f: np.ndarray
    g: np.ndarray
    k: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    dw1: np.ndarray
    dw2: np.ndarray
    h1_w: np.ndarray  # (C_gate, C_g)
    h1_b: np.ndarray  # (C_gate,)

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        f, g, k = self.f, self.g, self.k
        if f.ndim == 1:
            object.__setattr__(self, "f", f[:, None])
        if k.ndim == 1:
            object.__setattr__(self, "k", k[:, None])
        if g.ndim == 1:
            object.__setattr__(self, "g", g[:, None])
        if self.h1_b.ndim == 0:
            object.__setattr__(self, "h1_b", self.h1_b[None])
        c_f, p = self.f.shape
        hidden = self.w1.shape[0]
        c_out = self.w2.shape[0]
        checks = [
            self.w1.shape == (hidden, c_f),
            self.dw1.shape == self.w1.shape,
            self.w2.shape == (c_out, hidden),
            self.dw2.shape == self.w2.shape,
            self.k.shape == (c_out, p),
            self.h1_w.ndim == 2 and self.h1_w.shape[1] == self.g.shape[0],
            self.h1_w.shape[0] in (1, c_out),
            self.h1_b.shape == (self.h1_w.shape[0],),
        ]
        if not all(checks):
            raise ShapeMismatch("dynamic gate operands have incompatible shapes")


@dataclass(frozen=True, eq=False)
class GateOutput:
    f_o: np.ndarray
    f_r: np.ndarray
    gate: np.ndarray
    grad_dw1: np.ndarray
    grad_dw2: np.ndarray
    grad_h1_w: np.ndarray
    grad_h1_b: np.ndarray
    pre_activation: np.ndarray  # (W1 + dW1) @ F, exposed so callers can avoid ReLU kinks


def dynamic_gate_forward(inp: DynamicGateInputs, upstream: Optional[np.ndarray] = None) -> GateOutput:
    """Forward pass plus gradients of sum(upstream * F_O); upstream defaults to ones."""
    z1 = (inp.w1 + inp.dw1) @ inp.f
    a1 = np.maximum(z1, 0.0)
    w2 = inp.w2 + inp.dw2
    f_r = w2 @ a1
    pooled = inp.g.mean(axis=1)
    gate = expit(inp.h1_w @ pooled + inp.h1_b)
    gcol = gate[:, None]
    f_o = gcol * f_r + (1.0 - gcol) * inp.k

    u = np.ones_like(f_o) if upstream is None else np.asarray(upstream, dtype=np.float64)
    if u.shape != f_o.shape:
        raise ShapeMismatch(f"upstream {u.shape} vs output {f_o.shape}")
    d_fr = gcol * u
    grad_dw2 = d_fr @ a1.T
    d_z1 = (w2.T @ d_fr) * (z1 > 0)
    grad_dw1 = d_z1 @ inp.f.T
    d_gate = np.sum(u * (f_r - inp.k), axis=1)
    if gate.shape[0] == 1:
        d_gate = np.array([d_gate.sum()])
    d_pre = d_gate * gate * (1.0 - gate)
    return GateOutput(f_o, f_r, gate, grad_dw1, grad_dw2, np.outer(d_pre, pooled), d_pre, z1)
