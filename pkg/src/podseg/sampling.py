"""Seeded random panoptic maps for oracle cross-checks and round-trip tests."""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .core import ClassCatalog, PanopticMap, canonicalize_instances, round_half_up


def _rect(rng, h, w, min_side=2, max_side=None):
    max_side = max_side or max(h, w)
    rh = int(rng.integers(min_side, min(max_side, h) + 1))
    rw = int(rng.integers(min_side, min(max_side, w) + 1))
    y0 = int(rng.integers(0, h - rh + 1))
    x0 = int(rng.integers(0, w - rw + 1))
    return slice(y0, y0 + rh), slice(x0, x0 + rw)


def random_gt(rng: np.random.Generator, catalog: ClassCatalog, size: Tuple[int, int] = (16, 16),
              max_instances: int = 5, void: bool = True) -> PanopticMap:
    """Stuff background, a few rectangles of thing/OOD instances, optional void patches."""
    h, w = size
    off = catalog.id_offset
    stuff = sorted(catalog.stuff_ids)
    countable = sorted(catalog.thing_ids) + [catalog.ood_id]
    ids = np.full(size, int(rng.choice(stuff)) * off, dtype=np.int64)
    for _ in range(int(rng.integers(0, 3))):
        ids[_rect(rng, h, w)] = int(rng.choice(stuff)) * off
    next_inst = {}
    for _ in range(int(rng.integers(0, max_instances + 1))):
        cls = int(rng.choice(countable))
        next_inst[cls] = next_inst.get(cls, 0) + 1
        ids[_rect(rng, h, w, max_side=max(h, w) // 2)] = cls * off + next_inst[cls]
    if void and rng.random() < 0.6:
        ids[_rect(rng, h, w, min_side=1, max_side=max(h, w) // 3)] = catalog.void_panoptic_id()
    return PanopticMap(ids, off)


def perturb(rng: np.random.Generator, gt: PanopticMap, catalog: ClassCatalog) -> PanopticMap:
    """A plausible prediction: shifted/relabelled segments, spurious blobs, pixel noise, void."""
    h, w = gt.shape
    off = catalog.id_offset
    ids = gt.ids.copy()
    ids[ids == catalog.void_panoptic_id()] = int(rng.choice(sorted(catalog.stuff_ids))) * off
    if rng.random() < 0.5:
        dy, dx = (int(v) for v in rng.integers(-2, 3, size=2))
        ids = np.roll(ids, (dy, dx), axis=(0, 1))
    valid = np.unique(ids).tolist()
    for _ in range(int(rng.integers(0, 3))):
        src = int(rng.choice(valid))
        cls = src // off
        if catalog.is_countable(cls) and rng.random() < 0.5:
            new_cls = int(rng.choice(sorted(catalog.thing_ids) + [catalog.ood_id]))
            ids[ids == src] = new_cls * off + 50 + int(rng.integers(1, 50))
    for _ in range(int(rng.integers(0, 3))):
        cls = int(rng.choice(sorted(catalog.known_ids)))
        inst = int(rng.integers(100, 200)) if catalog.is_countable(cls) else 0
        ids[_rect(rng, h, w, min_side=1, max_side=max(h, w) // 2)] = cls * off + inst
    noise = rng.random((h, w)) < rng.uniform(0.0, 0.1)
    if noise.any():
        pool = np.unique(ids)
        ids[noise] = rng.choice(pool, size=int(noise.sum()))
    return PanopticMap(ids, off)


def random_map_pair(rng: np.random.Generator, catalog: ClassCatalog, size: Tuple[int, int] = (16, 16)):
    gt = random_gt(rng, catalog, size)
    return perturb(rng, gt, catalog), gt


def random_separable_gt(rng: np.random.Generator, catalog: ClassCatalog, size: Tuple[int, int] = (64, 64),
                        max_instances: int = 5, min_center_distance: float = 3.0,
                        stuff_area_min: int = 64) -> PanopticMap:
    """Void-free map with large stuff bands and instances whose rounded centers are well apart.

    Returned instances are in canonical numbering, so fusion of its ideal
    targets reproduces it pixel for pixel.
    """
    h, w = size
    off = catalog.id_offset
    stuff = sorted(catalog.stuff_ids)
    countable = sorted(catalog.thing_ids) + [catalog.ood_id]
    while True:
        n_bands = int(rng.integers(1, 4))
        cuts = np.sort(rng.choice(np.arange(1, h), size=n_bands - 1, replace=False)) if n_bands > 1 else []
        bounds = [0, *[int(c) for c in cuts], h]
        classes = rng.choice(stuff, size=n_bands, replace=False)
        ids = np.zeros(size, dtype=np.int64)
        for (a, b), cls in zip(zip(bounds[:-1], bounds[1:]), classes):
            ids[a:b] = int(cls) * off
        yy, xx = np.indices(size)
        centers = []
        next_inst = {}
        for _ in range(int(rng.integers(0, max_instances + 1))):
            cls = int(rng.choice(countable))
            rh, rw = (int(v) for v in rng.integers(1, max(2, min(h, w) // 4) + 1, size=2))
            y0 = int(rng.integers(0, h - rh + 1))
            x0 = int(rng.integers(0, w - rw + 1))
            region = (yy >= y0) & (yy < y0 + rh) & (xx >= x0) & (xx < x0 + rw)
            if rng.random() < 0.5:
                cy, cx = y0 + (rh - 1) / 2, x0 + (rw - 1) / 2
                region &= ((yy - cy) / (rh / 2)) ** 2 + ((xx - cx) / (rw / 2)) ** 2 <= 1.0
            if not region.any() or np.any(ids[region] % off):
                continue  # keep instances disjoint so each stays one compact blob
            c = (round_half_up(yy[region].mean()), round_half_up(xx[region].mean()))
            if any(np.hypot(c[0] - o[0], c[1] - o[1]) < min_center_distance for o in centers):
                continue
            centers.append(c)
            next_inst[cls] = next_inst.get(cls, 0) + 1
            ids[region] = cls * off + next_inst[cls]
        pmap = PanopticMap(ids, off)
        areas = [int(np.count_nonzero(ids == s * off)) for s in stuff]
        if all(a == 0 or a >= stuff_area_min for a in areas):
            return canonicalize_instances(pmap, catalog)


def small_catalog() -> ClassCatalog:
    """Two stuff, two thing classes plus OOD and void; enough variety for 16x16 maps."""
    return ClassCatalog(
        stuff_ids=frozenset({7, 11}),
        thing_ids=frozenset({24, 26}),
        ood_id=50,
        void_id=255,
        names={7: "road", 11: "building", 24: "person", 26: "car", 50: "ood", 255: "void"},
    )
