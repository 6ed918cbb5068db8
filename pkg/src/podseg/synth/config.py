from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Tuple


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for OOD injection. Blend magnitudes are conventional defaults, not tuned values."""

    seed: int = 0
    instances_per_image: Tuple[int, int] = (1, 3)
    gamma_range: Tuple[float, float] = (0.8, 1.2)
    color_shift_max: float = 12.0 / 255.0
    curve_knots: int = 3
    curve_jitter: float = 0.08
    blur_by_bin: Tuple[int, ...] = (1, 1, 0, 0)
    reject_min_visible: float = 0.6
    max_retries: int = 10
    n_bins: int = 4

    def __post_init__(self):
        lo, hi = self.instances_per_image
        if lo < 0 or hi < lo:
            raise ValueError(f"bad instances_per_image range {self.instances_per_image}")
        g0, g1 = self.gamma_range
        if g0 <= 0 or g1 < g0:
            raise ValueError(f"bad gamma_range {self.gamma_range}")
        if not 0.0 < self.reject_min_visible <= 1.0:
            raise ValueError("reject_min_visible must lie in (0, 1]")
        if self.color_shift_max < 0 or self.curve_knots < 0 or self.curve_jitter < 0:
            raise ValueError("blend magnitudes must be non-negative")
        if any(r < 0 for r in self.blur_by_bin) or not self.blur_by_bin:
            raise ValueError("blur radii must be non-negative and at least one must be given")
        if self.n_bins < 1 or self.max_retries < 1:
            raise ValueError("n_bins and max_retries must be >= 1")

    def blur_radius(self, bin_index: int) -> int:
        return self.blur_by_bin[min(bin_index, len(self.blur_by_bin) - 1)]

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
