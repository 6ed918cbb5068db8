"""Photometric blending of a scaled cutout into a scene.

Transforms run in a fixed order on the cutout's RGB in [0, 1]: gamma, a
monotone piecewise-linear tone curve, a per-channel additive shift, a box
blur, and finally alpha-over compositing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from ..errors import RejectLowVisibility
from .assets import OodAsset
from .bins import Placement
from .config import SynthConfig


@dataclass(frozen=True)
class BlendParams:
    gamma: float = 1.0
    curve_x: Tuple[float, ...] = ()
    curve_y: Tuple[float, ...] = ()
    shift: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    blur_radius: int = 0

    @classmethod
    def identity(cls) -> "BlendParams":
        return cls()


def sample_blend_params(cfg: SynthConfig, bin_index: int, rng: np.random.Generator) -> BlendParams:
    gamma = float(rng.uniform(*cfg.gamma_range))
    kx = np.sort(rng.uniform(0.0, 1.0, size=cfg.curve_knots))
    ky = np.sort(np.clip(kx + rng.uniform(-cfg.curve_jitter, cfg.curve_jitter, size=cfg.curve_knots), 0.0, 1.0))
    shift = rng.uniform(-cfg.color_shift_max, cfg.color_shift_max, size=3)
    return BlendParams(gamma, tuple(kx.tolist()), tuple(ky.tolist()), tuple(shift.tolist()), cfg.blur_radius(bin_index))


def tone_curve(values: np.ndarray, xs, ys) -> np.ndarray:
    xs = np.concatenate([[0.0], np.asarray(xs, dtype=np.float64), [1.0]])
    ys = np.concatenate([[0.0], np.asarray(ys, dtype=np.float64), [1.0]])
    return np.interp(values, xs, ys)


def apply_blend(rgb: np.ndarray, alpha: np.ndarray, params: BlendParams) -> np.ndarray:
    """Photometric chain on a cutout; ``rgb`` in [0, 1], ``alpha`` in [0, 1]."""
    out = np.power(rgb, params.gamma)
    if params.curve_x:
        out = tone_curve(out, params.curve_x, params.curve_y)
    out = np.clip(out + np.asarray(params.shift)[None, None, :], 0.0, 1.0)
    if params.blur_radius > 0:
        size = 2 * params.blur_radius + 1
        # Normalized by blurred alpha so transparent surroundings do not darken edges.
        wsum = ndimage.uniform_filter(alpha, size=size, mode="constant")
        for c in range(3):
            num = ndimage.uniform_filter(out[..., c] * alpha, size=size, mode="constant")
            out[..., c] = np.where(wsum > 0, num / np.maximum(wsum, 1e-12), out[..., c])
    return out


def scaled_cutout(asset: OodAsset, scale: float) -> np.ndarray:
    from PIL import Image

    h = max(1, int(round(asset.height * scale)))
    w = max(1, int(round(asset.width * scale)))
    if (h, w) == (asset.height, asset.width):
        return np.array(asset.rgba)
    rgb = Image.fromarray(np.ascontiguousarray(asset.rgba[..., :3])).resize((w, h), Image.BILINEAR)
    a = Image.fromarray(np.ascontiguousarray(asset.rgba[..., 3])).resize((w, h), Image.NEAREST)
    return np.dstack([np.asarray(rgb), np.asarray(a)])


def paste_window(cut_shape: Tuple[int, int], placement: Placement, image_shape: Tuple[int, int]):
    """Slices (scene, cutout) for the part of the cutout that lands inside the frame."""
    ch, cw = cut_shape
    H, W = image_shape
    y0 = placement.y - ch + 1
    x0 = placement.x - cw // 2
    sy0, sx0 = max(y0, 0), max(x0, 0)
    sy1, sx1 = min(y0 + ch, H), min(x0 + cw, W)
    if sy1 <= sy0 or sx1 <= sx0:
        return None
    return (slice(sy0, sy1), slice(sx0, sx1)), (slice(sy0 - y0, sy1 - y0), slice(sx0 - x0, sx1 - x0))


def blend_composite(image: np.ndarray, asset: OodAsset, placement: Placement, cfg: SynthConfig,
                    rng: Optional[np.random.Generator] = None, params: Optional[BlendParams] = None):
    """Composite ``asset`` into ``image``.

    Returns the new image and the boolean mask of scene pixels now covered by
    the asset. Either ``rng`` (to sample blend parameters) or ``params`` must be
    given.
    """
    if params is None:
        if rng is None:
            raise ValueError("pass rng or params")
        params = sample_blend_params(cfg, placement.bin_index, rng)
    cut = scaled_cutout(asset, placement.scale)
    cut_mask = cut[..., 3] > 0
    total = int(cut_mask.sum())
    window = paste_window(cut_mask.shape, placement, image.shape[:2])
    visible = int(cut_mask[window[1]].sum()) if window is not None and total else 0
    if total == 0 or visible / total < cfg.reject_min_visible:
        raise RejectLowVisibility(f"only {visible}/{total} asset pixels inside the frame")
    scene_sl, cut_sl = window

    alpha = cut[..., 3].astype(np.float64) / 255.0
    rgb = apply_blend(cut[..., :3].astype(np.float64) / 255.0, alpha, params)
    out = image.astype(np.float64) / 255.0
    a = alpha[cut_sl][..., None]
    out[scene_sl] = a * rgb[cut_sl] + (1.0 - a) * out[scene_sl]
    covered = np.zeros(image.shape[:2], dtype=bool)
    covered[scene_sl] = cut_mask[cut_sl]
    return np.rint(out * 255.0).astype(np.uint8), covered
