"""Split-level synthesis: base scenes, OOD injection, manifests, disjointness and curriculum."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..core import ClassCatalog, DatasetManifest, PanopticMap, write_image, write_json, write_map
from .assets import DEFAULT_TEST_CATEGORIES, OodAsset, builtin_library, split_library
from .bins import DepthBinTable, PlacementPrior, build_depth_bins_from_maps
from .config import SynthConfig
from .inject import inject_ood
from .scenes import make_street_scene

log = logging.getLogger(__name__)

_SPLIT_CODE = {"train": 1, "test": 2}


class DisjointCheck(NamedTuple):
    shared: List[str]
    warning: Optional[str]

    @property
    def ok(self) -> bool:
        return not self.shared


def check_disjoint(train: DatasetManifest, test: DatasetManifest) -> DisjointCheck:
    shared = sorted(set(train.ood_categories) & set(test.ood_categories))
    warning = None
    empty = [m.split for m in (train, test) if not m.ood_categories]
    if empty:
        warning = f"empty OOD category list for split(s): {', '.join(sorted(empty))}"
        log.warning(warning)
    return DisjointCheck(shared, warning)


def curriculum_order(assets: Sequence[OodAsset]) -> List[OodAsset]:
    """Distinct-tier assets first, then similar-tier; stable within each tier."""
    return sorted(assets, key=lambda a: a.similarity_tier != "distinct")


def curriculum_schedule(assets: Sequence[OodAsset]) -> dict:
    ordered = curriculum_order(assets)
    phases = []
    for tier in ("distinct", "similar"):
        names = [a.name or a.category for a in ordered if a.similarity_tier == tier]
        if names:
            phases.append({"tier": tier, "assets": names})
    return {"order": [a.name or a.category for a in ordered], "phases": phases}


def image_rng(seed: int, split: str, index: int, stream: int) -> np.random.Generator:
    """Independent stream per (seed, split, image, stage); results do not depend on scheduling."""
    return np.random.default_rng([seed, _SPLIT_CODE[split], index, stream])


def _inject_one(args):
    index, split, image, gt, assets, cfg, catalog, table, prior = args
    return inject_ood(image, gt, assets, cfg, image_rng(cfg.seed, split, index, 1), catalog, table, prior)


@dataclass(frozen=True)
class SplitResult:
    manifest: DatasetManifest
    table: DepthBinTable
    reports: Tuple[dict, ...]


def synthesize_split(out_dir: os.PathLike, split: str, n_images: int, size: Tuple[int, int],
                     assets: Sequence[OodAsset], cfg: SynthConfig, catalog: ClassCatalog,
                     jobs: int = 1) -> SplitResult:
    """Generate ``n_images`` scenes, inject OOD objects, and write images, maps and a manifest."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "panoptic").mkdir(parents=True, exist_ok=True)
    h, w = size
    scenes = [make_street_scene(h, w, image_rng(cfg.seed, split, i, 0), catalog) for i in range(n_images)]
    table = build_depth_bins_from_maps([gt for _, gt in scenes], catalog, cfg.n_bins)
    prior = PlacementPrior.from_assets(assets, cfg.n_bins)
    work = [(i, split, img, gt, list(assets), cfg, catalog, table, prior) for i, (img, gt) in enumerate(scenes)]
    if jobs > 1 and n_images > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_inject_one, work))
    else:
        results = [_inject_one(wk) for wk in work]

    items, reports = [], []
    for i, (img, gt, rep) in enumerate(results):
        img_rel, pan_rel = f"images/{i:04d}.png", f"panoptic/{i:04d}.pan"
        write_image(out / img_rel, img)
        write_map(out / pan_rel, gt)
        items.append((img_rel, pan_rel))
        reports.append({"index": i, **rep.to_json()})
    categories = sorted({a.category for a in assets})
    manifest = DatasetManifest(split, tuple(items), tuple(categories), cfg.seed, root=out)
    manifest.save(out / "manifest.json")
    write_json(out / "depth_bins.json", table.to_json())
    if split == "train":
        write_json(out / "curriculum.json", curriculum_schedule(assets))
    return SplitResult(manifest, table, tuple(reports))


def synthesize_benchmark(out_dir: os.PathLike, cfg: SynthConfig, catalog: ClassCatalog,
                         n_train: int, n_test: int, size: Tuple[int, int] = (64, 64),
                         assets: Optional[Sequence[OodAsset]] = None,
                         test_categories: Sequence[str] = DEFAULT_TEST_CATEGORIES,
                         jobs: int = 1):
    """Train and test splits whose OOD categories do not overlap."""
    if assets is None:
        assets = builtin_library(cfg.seed)
    train_assets, test_assets = split_library(assets, test_categories)
    out = Path(out_dir)
    train = synthesize_split(out / "train", "train", n_train, size, train_assets, cfg, catalog, jobs)
    test = synthesize_split(out / "test", "test", n_test, size, test_assets, cfg, catalog, jobs)
    return train, test, check_disjoint(train.manifest, test.manifest)
