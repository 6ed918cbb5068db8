"""Depth-binned size statistics and placement sampling.

No depth maps are available, so the bottom edge of an instance (as a fraction
of image height) stands in for its distance: on a ground plane, lower in the
frame means closer to the camera.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core import ClassCatalog, DatasetManifest, PanopticMap, decode_panoptic, read_map
from ..errors import EmptyBinStats, NoInstances
from .assets import OodAsset

log = logging.getLogger(__name__)

QUANTILES = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class DepthBin:
    lo: float
    hi: float
    # class id -> (q25, q50, q75) of instance heights in pixels
    heights: Mapping[int, Tuple[float, float, float]] = field(default_factory=dict)
    counts: Mapping[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class DepthBinTable:
    bins: Tuple[DepthBin, ...]

    @property
    def n_bins(self) -> int:
        return len(self.bins)

    @property
    def edges(self) -> np.ndarray:
        return np.array([b.lo for b in self.bins] + [self.bins[-1].hi])

    def bin_of(self, bottom_frac) -> np.ndarray:
        idx = np.searchsorted(self.edges, bottom_frac, side="right") - 1
        return np.clip(idx, 0, self.n_bins - 1)

    def row_bins(self, height: int) -> np.ndarray:
        """Bin index of every image row, using the row's bottom-edge fraction."""
        return self.bin_of((np.arange(height) + 1) / height)

    def classes(self) -> List[int]:
        return sorted({c for b in self.bins for c in b.heights})

    def to_json(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "bins": [
                {
                    "range": [b.lo, b.hi],
                    "heights": {str(c): list(q) for c, q in sorted(b.heights.items())},
                    "counts": {str(c): n for c, n in sorted(b.counts.items())},
                }
                for b in self.bins
            ],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "DepthBinTable":
        bins = []
        for b in data["bins"]:
            lo, hi = b["range"]
            heights = {int(c): tuple(float(v) for v in q) for c, q in b["heights"].items()}
            counts = {int(c): int(n) for c, n in b.get("counts", {}).items()}
            bins.append(DepthBin(float(lo), float(hi), heights, counts))
        return cls(tuple(bins))


def instance_extents(pmap: PanopticMap, catalog: ClassCatalog) -> List[Tuple[int, float, int]]:
    """(class id, bottom-edge fraction, height) for each thing instance."""
    out = []
    for seg in decode_panoptic(pmap, catalog):
        if seg.class_id in catalog.thing_ids:
            y0, _, y1, _ = seg.bbox
            out.append((seg.class_id, y1 / pmap.height, y1 - y0))
    return out


def build_depth_bins_from_maps(maps: Iterable[PanopticMap], catalog: ClassCatalog, n_bins: int) -> DepthBinTable:
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    rows = [e for m in maps for e in instance_extents(m, catalog)]
    if not rows:
        raise NoInstances("no thing instances to derive size statistics from")
    cls = np.array([r[0] for r in rows])
    frac = np.array([r[1] for r in rows], dtype=np.float64)
    hgt = np.array([r[2] for r in rows], dtype=np.float64)
    edges = np.quantile(frac, np.linspace(0.0, 1.0, n_bins + 1))
    edges[0], edges[-1] = 0.0, 1.0
    edges = np.maximum.accumulate(edges)
    which = np.clip(np.searchsorted(edges, frac, side="right") - 1, 0, n_bins - 1)
    bins = []
    for b in range(n_bins):
        heights, counts = {}, {}
        for c in sorted(set(cls[which == b].tolist())):
            sel = hgt[(which == b) & (cls == c)]
            heights[c] = tuple(float(v) for v in np.quantile(sel, QUANTILES))
            counts[c] = int(sel.size)
        bins.append(DepthBin(float(edges[b]), float(edges[b + 1]), heights, counts))
    return DepthBinTable(tuple(bins))


def build_depth_bins(manifest: DatasetManifest, catalog: ClassCatalog, n_bins: int) -> DepthBinTable:
    maps = (read_map(manifest.resolve(pan), catalog.id_offset) for _, pan in manifest.items)
    return build_depth_bins_from_maps(maps, catalog, n_bins)


@dataclass(frozen=True)
class PlacementPrior:
    weights: Mapping[str, Tuple[float, ...]]
    n_bins: int

    def __post_init__(self):
        for cat, w in self.weights.items():
            w = np.asarray(w, dtype=np.float64)
            if w.shape != (self.n_bins,) or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
                raise ValueError(f"band weights for {cat!r} must be {self.n_bins} non-negative values summing to 1")

    def for_category(self, category: str) -> np.ndarray:
        if category in self.weights:
            return np.asarray(self.weights[category], dtype=np.float64)
        return np.full(self.n_bins, 1.0 / self.n_bins)

    @staticmethod
    def band_weights(band: str, n_bins: int) -> Tuple[float, ...]:
        i = np.arange(n_bins, dtype=np.float64)
        if band == "bottom":
            w = (i + 1) ** 2
        elif band == "top":
            w = (n_bins - i) ** 2
        else:
            w = np.ones(n_bins)
        return tuple((w / w.sum()).tolist())

    @classmethod
    def from_assets(cls, assets: Sequence[OodAsset], n_bins: int) -> "PlacementPrior":
        weights = {}
        for a in assets:
            weights.setdefault(a.category, cls.band_weights(a.band, n_bins))
        return cls(weights, n_bins)


@dataclass(frozen=True)
class Placement:
    y: int  # bottom row of the pasted object
    x: int  # center column of the pasted object
    scale: float
    bin_index: int
    stats_bin: int  # bin whose size statistics were used; differs from bin_index on fallback
    target_height: float

    @property
    def fell_back(self) -> bool:
        return self.stats_bin != self.bin_index


def resolve_paired_class(asset: OodAsset, table: DepthBinTable, catalog: ClassCatalog) -> int:
    """Map the asset's paired class name to an id, or fall back to the best-populated thing class."""
    if asset.paired_class is not None:
        for cid in table.classes():
            if catalog.name(cid) == asset.paired_class or str(cid) == str(asset.paired_class):
                return cid
    totals: Dict[int, int] = {}
    for b in table.bins:
        for c, n in b.counts.items():
            totals[c] = totals.get(c, 0) + n
    if not totals:
        raise EmptyBinStats("depth-bin table holds no class statistics")
    return min(totals, key=lambda c: (-totals[c], c))


def place_and_scale(asset: OodAsset, table: DepthBinTable, prior: PlacementPrior, paired_class: int,
                    rng: np.random.Generator, image_shape: Tuple[int, int]) -> Placement:
    height, width = image_shape
    weights = prior.for_category(asset.category)
    if len(weights) != table.n_bins:
        raise ValueError("prior and depth-bin table disagree on the number of bins")
    row_bins = table.row_bins(height)
    populated = np.array([np.any(row_bins == b) for b in range(table.n_bins)])
    w = np.where(populated, weights, 0.0)
    if w.sum() <= 0:
        w = populated / populated.sum()
    b = int(rng.choice(table.n_bins, p=w / w.sum()))
    rows = np.flatnonzero(row_bins == b)
    y = int(rows[rng.integers(len(rows))])

    with_stats = [i for i, bn in enumerate(table.bins) if paired_class in bn.heights]
    if not with_stats:
        raise EmptyBinStats(f"class {paired_class} has no size statistics in any bin")
    stats_bin = b if b in with_stats else min(with_stats, key=lambda i: (abs(i - b), i))
    if stats_bin != b:
        log.debug("bin %d lacks stats for class %d, using bin %d", b, paired_class, stats_bin)
    q25, _, q75 = table.bins[stats_bin].heights[paired_class]
    target = float(rng.uniform(q25, q75)) if q75 > q25 else float(q25)
    x = int(rng.integers(width))
    return Placement(y, x, target / asset.height, b, stats_bin, target)
