from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

from ..errors import NonFinite


@dataclass(frozen=True)
class LossConfig:
    m: float = 50.0
    alpha: float = 200.0
    beta1: float = 0.01
    beta2: float = 0.001
    ocm_weight_a: float = 0.7
    ocm_weight_b: float = 0.8
    bootstrap_fraction: float = 0.15

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.bootstrap_fraction > 1:
            raise ValueError("bootstrap_fraction must lie in (0, 1]")


PARTS = ("ocm", "sem", "cp", "cr", "s_am", "c_am", "r_am")


def total_loss(parts: Mapping[str, float], cfg: LossConfig = LossConfig()) -> float:
    """ocm + sem + alpha*cp + beta1*(cr + s_am) + beta2*(c_am + r_am)."""
    missing = [p for p in PARTS if p not in parts]
    if missing:
        raise KeyError(f"missing loss parts: {missing}")
    vals = {p: float(parts[p]) for p in PARTS}
    bad = [p for p, v in vals.items() if not math.isfinite(v)]
    if bad:
        raise NonFinite(f"non-finite loss parts: {bad}")
    return (vals["ocm"] + vals["sem"] + cfg.alpha * vals["cp"]
            + cfg.beta1 * (vals["cr"] + vals["s_am"])
            + cfg.beta2 * (vals["c_am"] + vals["r_am"]))
