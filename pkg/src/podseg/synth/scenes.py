"""Miniature road scenes with panoptic ground truth, used as the base images for injection."""

from __future__ import annotations

from typing import Dict, Tuple

import numpy as np

from ..core import ClassCatalog, PanopticMap

ROLE_NAMES = ("road", "sidewalk", "building", "vegetation", "sky", "car", "person")

_COLORS = {
    "road": (0.50, 0.25, 0.50),
    "sidewalk": (0.95, 0.14, 0.91),
    "building": (0.27, 0.27, 0.27),
    "vegetation": (0.42, 0.56, 0.14),
    "sky": (0.27, 0.51, 0.71),
    "car": (0.00, 0.00, 0.56),
    "person": (0.86, 0.08, 0.24),
}


def scene_roles(catalog: ClassCatalog) -> Dict[str, int]:
    by_name = {catalog.name(i): i for i in catalog.known_ids}
    missing = [r for r in ROLE_NAMES if r not in by_name]
    if missing:
        raise ValueError(f"catalog lacks classes needed by the scene generator: {missing}")
    return {r: by_name[r] for r in ROLE_NAMES}


def make_street_scene(height: int, width: int, rng: np.random.Generator,
                      catalog: ClassCatalog) -> Tuple[np.ndarray, PanopticMap]:
    """Return an RGB uint8 image and its panoptic map.

    Things grow with their bottom row so that vertical position tracks depth.
    """
    roles = scene_roles(catalog)
    off = catalog.id_offset
    horizon = int(height * rng.uniform(0.35, 0.5))
    sky_end = int(horizon * rng.uniform(0.4, 0.7))
    ids = np.zeros((height, width), dtype=np.int64)
    ids[:sky_end] = roles["sky"] * off
    ids[sky_end:horizon] = roles["building"] * off
    veg_x0 = int(rng.integers(0, max(1, width // 2)))
    veg_w = int(rng.integers(width // 8, width // 3 + 1))
    ids[sky_end + (horizon - sky_end) // 3:horizon, veg_x0:veg_x0 + veg_w] = roles["vegetation"] * off
    ids[horizon:] = roles["road"] * off
    yy, xx = np.indices((height, width))
    depth = (yy - horizon) / max(height - horizon, 1)
    walk = (yy >= horizon) & ((xx < width * (0.25 * depth)) | (xx >= width * (1.0 - 0.25 * depth)))
    ids[walk] = roles["sidewalk"] * off

    n_things = int(rng.integers(2, 6))
    things = []
    for _ in range(n_things):
        kind = "car" if rng.random() < 0.6 else "person"
        bottom = int(rng.integers(horizon + 2, height))
        near = (bottom - horizon) / max(height - horizon, 1)
        h = max(2, int(round((0.08 + 0.35 * near) * height * (1.0 if kind == "car" else 1.3))))
        w = max(2, int(round(h * (1.6 if kind == "car" else 0.4))))
        x0 = int(rng.integers(-w // 3, width - 2 * w // 3))
        things.append((bottom, kind, h, w, x0))
    things.sort(key=lambda t: t[0])  # far first so nearer things occlude
    counters = {"car": 0, "person": 0}
    for bottom, kind, h, w, x0 in things:
        y0 = bottom - h + 1
        box = (yy >= y0) & (yy <= bottom) & (xx >= x0) & (xx < x0 + w)
        if kind == "person":
            cy, cx = (y0 + bottom) / 2.0, x0 + (w - 1) / 2.0
            box &= ((yy - cy) / (h / 2.0)) ** 2 + ((xx - cx) / max(w / 2.0, 1.0)) ** 2 <= 1.0
        if not box.any():
            continue
        counters[kind] += 1
        ids[box] = roles[kind] * off + counters[kind]

    # Drop thing instances that were completely covered by later ones and renumber.
    pmap = _compact(ids, catalog)
    rgb = np.zeros((height, width, 3))
    classes = pmap.class_ids
    for role, cid in roles.items():
        rgb[classes == cid] = _COLORS[role]
    inst = pmap.instance_ids
    rgb *= (1.0 - 0.15 * (inst % 3 == 2))[..., None]
    rgb += rng.normal(0.0, 0.02, size=rgb.shape)
    image = np.rint(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)
    return image, pmap


def _compact(ids: np.ndarray, catalog: ClassCatalog) -> PanopticMap:
    out = ids.copy()
    off = catalog.id_offset
    per_class: Dict[int, int] = {}
    for pid in np.unique(ids).tolist():
        cls, inst = divmod(pid, off)
        if inst == 0:
            continue
        per_class[cls] = per_class.get(cls, 0) + 1
        out[ids == pid] = cls * off + per_class[cls]
    return PanopticMap(out, off)
