"""OOD object cutouts: file format and a small procedural library."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ..errors import FormatError

TIERS = ("distinct", "similar")
BANDS = ("top", "bottom", "any")


@dataclass(frozen=True, eq=False)
class OodAsset:
    rgba: np.ndarray  # (h, w, 4) uint8
    category: str
    similarity_tier: str = "distinct"
    paired_class: Optional[str] = None
    band: str = "any"
    name: str = ""

    def __post_init__(self):
        rgba = np.asarray(self.rgba, dtype=np.uint8)
        if rgba.ndim != 3 or rgba.shape[2] != 4:
            raise FormatError(f"asset {self.name or self.category!r} must be RGBA")
        if self.similarity_tier not in TIERS:
            raise FormatError(f"similarity_tier must be one of {TIERS}")
        if self.band not in BANDS:
            raise FormatError(f"band must be one of {BANDS}")
        mask = rgba[..., 3] > 0
        if not mask.any():
            raise FormatError(f"asset {self.name or self.category!r} has an empty mask")
        ys, xs = np.nonzero(mask)
        rgba = rgba[ys.min(): ys.max() + 1, xs.min(): xs.max() + 1].copy()
        rgba.flags.writeable = False
        object.__setattr__(self, "rgba", rgba)

    @property
    def mask(self) -> np.ndarray:
        return self.rgba[..., 3] > 0

    @property
    def height(self) -> int:
        return self.rgba.shape[0]

    @property
    def width(self) -> int:
        return self.rgba.shape[1]

    def meta(self) -> dict:
        d = {"category": self.category, "similarity_tier": self.similarity_tier, "band": self.band}
        if self.paired_class is not None:
            d["paired_class"] = self.paired_class
        return d


def save_assets(directory: os.PathLike, assets: Sequence[OodAsset]) -> None:
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, asset in enumerate(assets):
        stem = asset.name or f"asset_{i:03d}"
        Image.fromarray(np.asarray(asset.rgba)).save(directory / f"{stem}.png", format="PNG")
        (directory / f"{stem}.json").write_text(json.dumps(asset.meta(), sort_keys=True) + "\n", encoding="utf-8")


def load_assets(directory: os.PathLike) -> List[OodAsset]:
    from PIL import Image

    directory = Path(directory)
    assets = []
    for meta_path in sorted(directory.glob("*.json")):
        png = meta_path.with_suffix(".png")
        if not png.exists():
            raise FormatError(f"{meta_path} has no matching .png")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        with Image.open(png) as im:
            rgba = np.asarray(im.convert("RGBA"), dtype=np.uint8).copy()
        assets.append(OodAsset(
            rgba=rgba,
            category=str(meta["category"]),
            similarity_tier=str(meta.get("similarity_tier", "distinct")),
            paired_class=meta.get("paired_class"),
            band=str(meta.get("band", "any")),
            name=meta_path.stem,
        ))
    return assets


# category, tier, paired known class, vertical band, shape, aspect (h / w)
LIBRARY = (
    ("hair dryer", "distinct", "person", "any", "triangle", 1.0),
    ("airplane", "distinct", "car", "top", "cross", 0.6),
    ("couch", "distinct", "car", "bottom", "rect", 0.55),
    ("surfboard", "distinct", "person", "any", "ellipse", 2.6),
    ("desk", "distinct", "car", "bottom", "rect", 0.8),
    ("cat", "similar", "person", "bottom", "blob", 0.9),
    ("monkey", "similar", "person", "any", "blob", 1.3),
    ("fan", "distinct", "person", "bottom", "disc", 1.0),
    ("teddy bear", "similar", "person", "bottom", "blob", 1.2),
    ("chair", "distinct", "person", "bottom", "rect", 1.4),
    ("kettle", "distinct", "person", "bottom", "ellipse", 0.9),
    ("suitcase", "distinct", "car", "bottom", "rect", 1.1),
    ("trash bin", "similar", "person", "bottom", "rect", 1.6),
)


def _shape_mask(shape: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.indices((h, w), dtype=np.float64)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ny, nx = (yy - cy) / max(h / 2.0, 1), (xx - cx) / max(w / 2.0, 1)
    if shape == "rect":
        mask = np.ones((h, w), dtype=bool)
    elif shape in ("ellipse", "disc"):
        mask = ny**2 + nx**2 <= 1.0
    elif shape == "triangle":
        mask = np.abs(nx) <= (ny + 1.0) / 2.0
    elif shape == "cross":
        mask = (np.abs(ny) <= 0.3) | (np.abs(nx) <= 0.2)
    else:  # blob: radius modulated by a few random harmonics
        theta = np.arctan2(ny, nx)
        r = 0.8 + 0.2 * sum(rng.uniform(-1, 1) * np.cos(k * theta + rng.uniform(0, 2 * np.pi)) for k in (2, 3))
        mask = np.sqrt(ny**2 + nx**2) <= r
    return mask


def make_asset(category: str, tier: str, paired_class: str, band: str, shape: str, aspect: float,
               rng: np.random.Generator, base_height: int = 24, name: str = "") -> OodAsset:
    h = int(base_height)
    w = max(3, int(round(h / aspect)))
    mask = _shape_mask(shape, h, w, rng)
    base = rng.uniform(0.1, 0.95, size=3)
    yy, xx = np.indices((h, w), dtype=np.float64)
    shade = 0.75 + 0.25 * (1.0 - yy / max(h - 1, 1))
    stripe = 0.08 * np.sin(xx * rng.uniform(0.3, 1.2) + rng.uniform(0, np.pi))
    rgb = np.clip(base[None, None, :] * shade[..., None] + stripe[..., None], 0.0, 1.0)
    rgba = np.zeros((h, w, 4), dtype=np.uint8)
    rgba[..., :3] = np.rint(rgb * 255).astype(np.uint8)
    rgba[..., 3] = np.where(mask, 255, 0)
    return OodAsset(rgba, category, tier, paired_class, band, name)


def builtin_library(seed: int = 0, variants: int = 2) -> List[OodAsset]:
    """Procedurally drawn stand-ins for each library category, ``variants`` apiece."""
    rng = np.random.default_rng([seed, 0xA55E7])
    assets = []
    for category, tier, paired, band, shape, aspect in LIBRARY:
        for v in range(variants):
            name = f"{category.replace(' ', '_')}_{v}"
            assets.append(make_asset(category, tier, paired, band, shape, aspect, rng, name=name))
    return assets


def split_library(assets: Sequence[OodAsset], test_categories: Sequence[str]):
    """Partition assets into (train, test) pools by category."""
    test_set = set(test_categories)
    train = [a for a in assets if a.category not in test_set]
    test = [a for a in assets if a.category in test_set]
    return train, test


DEFAULT_TEST_CATEGORIES = ("fan", "teddy bear", "chair", "kettle", "suitcase", "trash bin")
