from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from ..core import ClassCatalog, PanopticMap
from ..errors import EmptyBinStats, RejectLowVisibility
from .assets import OodAsset
from .bins import DepthBinTable, PlacementPrior, place_and_scale, resolve_paired_class
from .blend import blend_composite
from .config import SynthConfig

log = logging.getLogger(__name__)


@dataclass
class InjectionReport:
    requested: int = 0
    injected: int = 0
    categories: List[str] = field(default_factory=list)
    rejections: int = 0
    skipped: int = 0
    fallbacks: int = 0
    occluded: int = 0  # pasted, then hidden below the visibility floor by later pastes
    dropped: int = 0  # fully hidden by later pastes

    def to_json(self) -> dict:
        return dict(self.__dict__)


def inject_ood(image: np.ndarray, gt: PanopticMap, assets: Sequence[OodAsset], cfg: SynthConfig,
               rng: np.random.Generator, catalog: ClassCatalog, table: DepthBinTable,
               prior: PlacementPrior) -> Tuple[np.ndarray, PanopticMap, InjectionReport]:
    """Paste k OOD objects into a scene and relabel their visible pixels as new OOD instances.

    Later pastes occlude earlier ones; ground truth reflects what stays visible.
    """
    report = InjectionReport()
    lo, hi = cfg.instances_per_image
    k = int(rng.integers(lo, hi + 1))
    report.requested = k
    out_img = np.array(image, dtype=np.uint8, copy=True)
    ids = gt.ids.copy()
    off = catalog.id_offset
    ood_base = catalog.ood_id * off
    existing = ids[ids // off == catalog.ood_id] % off
    next_inst = int(existing.max()) + 1 if existing.size else 1
    if k == 0 or not assets:
        return out_img, PanopticMap(ids, off), report

    pasted = []  # (instance id, pasted pixel count, category)
    for _ in range(k):
        for attempt in range(cfg.max_retries):
            asset = assets[int(rng.integers(len(assets)))]
            try:
                paired = resolve_paired_class(asset, table, catalog)
                placement = place_and_scale(asset, table, prior, paired, rng, ids.shape)
                out_img, covered = blend_composite(out_img, asset, placement, cfg, rng)
            except (RejectLowVisibility, EmptyBinStats) as exc:
                report.rejections += 1
                log.debug("paste attempt %d rejected: %s", attempt, exc)
                continue
            report.fallbacks += int(placement.fell_back)
            ids[covered] = ood_base + next_inst
            pasted.append((next_inst, int(covered.sum()), asset.category))
            next_inst += 1
            break
        else:
            report.skipped += 1

    # Compact the injected ids so hidden instances leave no gaps.
    first_new = next_inst - len(pasted)
    renumber = first_new
    for inst, area, category in pasted:
        mask = ids == ood_base + inst
        remaining = int(mask.sum())
        if remaining == 0:
            report.dropped += 1
            continue
        if remaining / area < cfg.reject_min_visible:
            report.occluded += 1
        ids[mask] = ood_base + renumber
        renumber += 1
        report.categories.append(category)
    report.injected = renumber - first_new
    return out_img, PanopticMap(ids, off), report
