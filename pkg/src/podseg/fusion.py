"""Bottom-up panoptic fusion of dense network outputs.

Semantic argmax decides stuff versus foreground (thing and OOD classes); a
center heatmap plus per-pixel offsets group foreground pixels into instances,
and each instance takes the majority semantic class of its pixels.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .core import ClassCatalog, PanopticMap, round_half_up
from .errors import FormatError, NoCenters, ShapeMismatch

log = logging.getLogger(__name__)

ROLES = ("semantic_logits", "center_heatmap", "offsets")


@dataclass(frozen=True)
class FusionConfig:
    center_score_threshold: float = 0.1
    nms_window: int = 3
    max_centers: int = 200
    stuff_area_min: int = 64

    def __post_init__(self):
        if self.nms_window < 1 or self.nms_window % 2 == 0:
            raise ValueError("nms_window must be a positive odd integer")
        if not 0.0 <= self.center_score_threshold <= 1.0:
            raise ValueError("center_score_threshold must lie in [0, 1]")
        if self.max_centers < 1 or self.stuff_area_min < 0:
            raise ValueError("max_centers must be >= 1 and stuff_area_min >= 0")


@dataclass(frozen=True, eq=False)
class DensePredictionBundle:
    semantic_logits: np.ndarray  # (channels, H, W)
    center_heatmap: np.ndarray  # (H, W), values in [0, 1]
    offsets: np.ndarray  # (2, H, W), (dy, dx) in pixels toward the instance center

    def __post_init__(self):
        logits = np.asarray(self.semantic_logits, dtype=np.float64)
        heat = np.asarray(self.center_heatmap, dtype=np.float64)
        offs = np.asarray(self.offsets, dtype=np.float64)
        if logits.ndim != 3 or heat.ndim != 2 or offs.ndim != 3 or offs.shape[0] != 2:
            raise ShapeMismatch("expected logits (C,H,W), heatmap (H,W), offsets (2,H,W)")
        if logits.shape[1:] != heat.shape or offs.shape[1:] != heat.shape:
            raise ShapeMismatch(f"spatial shapes differ: {logits.shape}, {heat.shape}, {offs.shape}")
        if not np.all(np.isfinite(offs)):
            raise ValueError("offsets must be finite")
        object.__setattr__(self, "semantic_logits", logits)
        object.__setattr__(self, "center_heatmap", heat)
        object.__setattr__(self, "offsets", offs)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.center_heatmap.shape

    def check_catalog(self, catalog: ClassCatalog) -> None:
        expected = len(catalog.channel_ids)
        if self.semantic_logits.shape[0] != expected:
            raise ShapeMismatch(
                f"bundle has {self.semantic_logits.shape[0]} channels, catalog needs {expected}"
            )


def find_centers(heatmap: np.ndarray, cfg: FusionConfig = FusionConfig()) -> List[Tuple[int, int, float]]:
    heat = np.asarray(heatmap, dtype=np.float64)
    pooled = ndimage.maximum_filter(heat, size=cfg.nms_window, mode="constant", cval=-np.inf)
    keep = (heat == pooled) & (heat >= cfg.center_score_threshold)
    ys, xs = np.nonzero(keep)
    scores = heat[ys, xs]
    # lexsort: last key is primary -> descending score, then y, then x.
    order = np.lexsort((xs, ys, -scores))[: cfg.max_centers]
    return [(int(ys[i]), int(xs[i]), float(scores[i])) for i in order]


def group_pixels(offsets: np.ndarray, centers, foreground: np.ndarray) -> np.ndarray:
    """Assign each foreground pixel the 1-based index of the center nearest to its voted location."""
    foreground = np.asarray(foreground, dtype=bool)
    out = np.zeros(foreground.shape, dtype=np.int64)
    if not foreground.any():
        return out
    if len(centers) == 0:
        raise NoCenters("foreground pixels present but no instance centers")
    ys, xs = np.nonzero(foreground)
    vy = ys + offsets[0][ys, xs]
    vx = xs + offsets[1][ys, xs]
    cyx = np.array([(c[0], c[1]) for c in centers], dtype=np.float64)
    best = np.empty(len(ys), dtype=np.int64)
    chunk = max(1, 2_000_000 // len(cyx))
    for start in range(0, len(ys), chunk):
        sl = slice(start, start + chunk)
        d2 = (vy[sl, None] - cyx[None, :, 0]) ** 2 + (vx[sl, None] - cyx[None, :, 1]) ** 2
        best[sl] = np.argmin(d2, axis=1)  # first minimum -> lower center index wins ties
    out[ys, xs] = best + 1
    return out


def majority_class(classes: np.ndarray) -> int:
    values, counts = np.unique(classes, return_counts=True)
    return int(values[np.argmax(counts)])  # values ascend, so ties go to the smaller id


def fuse_semantic(semantic: np.ndarray, heatmap: np.ndarray, offsets: np.ndarray,
                  catalog: ClassCatalog, cfg: FusionConfig = FusionConfig(),
                  notes: Optional[list] = None) -> PanopticMap:
    """Fuse a per-pixel class grid with center/offset predictions into a panoptic map."""
    semantic = np.asarray(semantic, dtype=np.int64)
    countable = np.array(sorted(catalog.thing_ids | {catalog.ood_id}))
    foreground = np.isin(semantic, countable)
    centers = find_centers(heatmap, cfg)

    out = np.full(semantic.shape, catalog.void_panoptic_id(), dtype=np.int64)
    if foreground.any() and not centers:
        msg = "no instance centers found; foreground pixels set to void"
        log.info(msg)
        if notes is not None:
            notes.append(msg)
    elif foreground.any():
        inst = group_pixels(offsets, centers, foreground)
        next_id = {}
        for k in range(1, len(centers) + 1):
            mask = inst == k
            if not mask.any():
                continue
            cls = majority_class(semantic[mask])
            next_id[cls] = next_id.get(cls, 0) + 1
            out[mask] = cls * catalog.id_offset + next_id[cls]

    for cls in sorted(catalog.stuff_ids):
        mask = (semantic == cls) & ~foreground
        area = int(mask.sum())
        if area and area >= cfg.stuff_area_min:
            out[mask] = cls * catalog.id_offset
    return PanopticMap(out, catalog.id_offset)


def semantic_argmax(bundle: DensePredictionBundle, catalog: ClassCatalog) -> np.ndarray:
    bundle.check_catalog(catalog)
    lut = np.array(catalog.channel_ids, dtype=np.int64)
    return lut[np.argmax(bundle.semantic_logits, axis=0)]


def fuse_panoptic(bundle: DensePredictionBundle, cfg: FusionConfig, catalog: ClassCatalog,
                  notes: Optional[list] = None) -> PanopticMap:
    return fuse_semantic(semantic_argmax(bundle, catalog), bundle.center_heatmap, bundle.offsets,
                         catalog, cfg, notes)


def instance_mass_centers(gt: PanopticMap, catalog: ClassCatalog):
    """Yield (panoptic id, mask, (cy, cx)) for every thing/OOD instance, ordered by id."""
    yy, xx = np.indices(gt.shape)
    for pid in np.unique(gt.ids).tolist():
        if not catalog.is_countable(pid // catalog.id_offset):
            continue
        mask = gt.ids == pid
        yield pid, mask, (float(yy[mask].mean()), float(xx[mask].mean()))


def ideal_targets_from_gt(gt: PanopticMap, catalog: ClassCatalog, sigma: float = 8.0,
                          logit_value: float = 10.0) -> DensePredictionBundle:
    """Dense targets a perfect network would emit for ``gt``.

    Void pixels get all-zero logits, so they carry no class preference.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h, w = gt.shape
    channels = catalog.channel_ids
    logits = np.zeros((len(channels), h, w))
    classes = gt.class_ids
    for ch, cls in enumerate(channels):
        logits[ch][classes == cls] = logit_value

    heat = np.zeros((h, w))
    offsets = np.zeros((2, h, w))
    yy, xx = np.indices((h, w), dtype=np.float64)
    peaks = []
    for _, mask, (cy, cx) in instance_mass_centers(gt, catalog):
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
        np.maximum(heat, g, out=heat)
        offsets[0][mask] = cy - yy[mask]
        offsets[1][mask] = cx - xx[mask]
        peaks.append((round_half_up(cy), round_half_up(cx)))
    for py, px in peaks:
        if 0 <= py < h and 0 <= px < w:
            heat[py, px] = 1.0
    return DensePredictionBundle(logits, heat, offsets)


# ---------------------------------------------------------------- on-disk bundles


def write_bundle(directory: os.PathLike, stem: str, bundle: DensePredictionBundle) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {
        "semantic_logits": bundle.semantic_logits,
        "center_heatmap": bundle.center_heatmap[None],
        "offsets": bundle.offsets,
    }
    for role, arr in arrays.items():
        c, h, w = arr.shape
        (directory / f"{stem}.{role}.f32").write_bytes(arr.astype("<f4").tobytes(order="C"))
        sidecar = {"channels": c, "height": h, "width": w, "role": role}
        (directory / f"{stem}.{role}.json").write_text(json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8")


def _read_tensor(directory: Path, stem: str, role: str) -> np.ndarray:
    meta_path = directory / f"{stem}.{role}.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("role") != role:
        raise FormatError(f"{meta_path}: role {meta.get('role')!r} != {role!r}")
    c, h, w = int(meta["channels"]), int(meta["height"]), int(meta["width"])
    raw = (directory / f"{stem}.{role}.f32").read_bytes()
    if len(raw) != 4 * c * h * w:
        raise FormatError(f"{stem}.{role}.f32: size does not match sidecar")
    return np.frombuffer(raw, dtype="<f4").reshape(c, h, w).astype(np.float64)


def read_bundle(directory: os.PathLike, stem: str) -> DensePredictionBundle:
    directory = Path(directory)
    logits = _read_tensor(directory, stem, "semantic_logits")
    heat = _read_tensor(directory, stem, "center_heatmap")[0]
    offsets = _read_tensor(directory, stem, "offsets")
    return DensePredictionBundle(logits, heat, offsets)


def list_bundles(directory: os.PathLike) -> List[str]:
    suffix = ".semantic_logits.json"
    return sorted(p.name[: -len(suffix)] for p in Path(directory).glob(f"*{suffix}"))


__all__ = [
    "FusionConfig", "DensePredictionBundle", "find_centers", "group_pixels", "fuse_semantic",
    "fuse_panoptic", "semantic_argmax", "ideal_targets_from_gt", "instance_mass_centers",
    "write_bundle", "read_bundle", "list_bundles", "majority_class",
]
