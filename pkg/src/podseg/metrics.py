"""Segment matching and the PQ_in / PQ_out / POD-Q scores.

Matching follows the usual panoptic-quality rules: a prediction and a ground
truth segment of the same class match when their IoU is strictly above 0.5,
ground-truth void pixels are removed from the union, and an unmatched
prediction lying more than half on void is ignored instead of counted as a
false positive. Dataset scores pool TP/FP/FN counts over all images before
computing per-class PQ.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import ClassCatalog, DatasetManifest, PanopticMap, read_map
from .errors import (
    CatalogMismatch,
    DimensionMismatch,
    DomainError,
    MissingPrediction,
    NoInDistributionEvidence,
    NoOodEvidence,
)


@dataclass(frozen=True)
class ClassMatch:
    tp_ious: Tuple[float, ...] = ()
    fp: int = 0
    fn: int = 0

    @property
    def tp(self) -> int:
        return len(self.tp_ious)

    @property
    def iou_sum(self) -> float:
        # fsum is exactly rounded, so the sum does not depend on accumulation order.
        return math.fsum(self.tp_ious)

    @property
    def has_evidence(self) -> bool:
        return self.tp + self.fp + self.fn > 0

    def merge(self, other: "ClassMatch") -> "ClassMatch":
        return ClassMatch(tuple(sorted(self.tp_ious + other.tp_ious)), self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class MatchResult:
    per_class: Mapping[int, ClassMatch]
    # (pred panoptic id, gt panoptic id, iou) for each TP; only meaningful per image.
    pairs: Tuple[Tuple[int, int, float], ...] = ()

    def get(self, class_id: int) -> ClassMatch:
        return self.per_class.get(class_id, ClassMatch())

    def merge(self, other: "MatchResult") -> "MatchResult":
        merged = dict(self.per_class)
        for cls, cm in other.per_class.items():
            merged[cls] = merged[cls].merge(cm) if cls in merged else cm
        return MatchResult({k: merged[k] for k in sorted(merged)})


def _check_inputs(pred: PanopticMap, gt: PanopticMap, catalog: ClassCatalog) -> None:
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if pred.id_offset != catalog.id_offset or gt.id_offset != catalog.id_offset:
        raise CatalogMismatch("maps and catalog use different id offsets")
    known = np.array(sorted(catalog.known_ids))
    for name, pmap in (("prediction", pred), ("ground truth", gt)):
        classes = np.unique(pmap.ids // catalog.id_offset)
        stray = classes[~np.isin(classes, known)]
        if stray.size:
            raise CatalogMismatch(f"{name} contains class ids outside the catalog: {stray.tolist()}")


def _freeze(tp: Dict[int, list], fp: Dict[int, int], fn: Dict[int, int]) -> Dict[int, ClassMatch]:
    classes = sorted(set(tp) | set(fp) | set(fn))
    return {
        c: ClassMatch(tuple(sorted(tp.get(c, []))), fp.get(c, 0), fn.get(c, 0)) for c in classes
    }


def match_segments(pred: PanopticMap, gt: PanopticMap, catalog: ClassCatalog) -> MatchResult:
    _check_inputs(pred, gt, catalog)
    offset = catalog.id_offset
    void_pid = catalog.void_panoptic_id()
    g = gt.ids.ravel()
    p = pred.ids.ravel()
    # Any pred pixel whose class is void is not part of a predicted segment.
    p = np.where(p // offset == catalog.void_id, void_pid, p)

    g_ids, g_inv, g_area = np.unique(g, return_inverse=True, return_counts=True)
    p_ids, p_inv, p_area = np.unique(p, return_inverse=True, return_counts=True)
    joint = g_inv.astype(np.int64) * len(p_ids) + p_inv
    pair_keys, inter = np.unique(joint, return_counts=True)
    pair_g, pair_p = np.divmod(pair_keys, len(p_ids))

    void_row = np.searchsorted(g_ids, void_pid)
    has_gt_void = void_row < len(g_ids) and g_ids[void_row] == void_pid
    void_overlap = np.zeros(len(p_ids), dtype=np.int64)
    if has_gt_void:
        on_void = pair_g == void_row
        void_overlap[pair_p[on_void]] = inter[on_void]

    g_cls = g_ids // offset
    p_cls = p_ids // offset
    candidate = (g_cls[pair_g] == p_cls[pair_p]) & (g_cls[pair_g] != catalog.void_id)
    cg, cp, ci = pair_g[candidate], pair_p[candidate], inter[candidate]
    union = g_area[cg] + p_area[cp] - ci - void_overlap[cp]
    iou = ci / union
    hit = iou > 0.5

    tp: Dict[int, list] = {}
    fp: Dict[int, int] = {}
    fn: Dict[int, int] = {}
    pairs = []
    g_matched = np.zeros(len(g_ids), dtype=bool)
    p_matched = np.zeros(len(p_ids), dtype=bool)
    for gi, pi, v in zip(cg[hit].tolist(), cp[hit].tolist(), iou[hit].tolist()):
        tp.setdefault(int(g_cls[gi]), []).append(v)
        g_matched[gi] = True
        p_matched[pi] = True
        pairs.append((int(p_ids[pi]), int(g_ids[gi]), v))

    for gi in np.flatnonzero(~g_matched).tolist():
        if g_cls[gi] != catalog.void_id:
            c = int(g_cls[gi])
            fn[c] = fn.get(c, 0) + 1
    for pi in np.flatnonzero(~p_matched).tolist():
        c = int(p_cls[pi])
        if c == catalog.void_id:
            continue
        if void_overlap[pi] / p_area[pi] > 0.5:
            continue
        fp[c] = fp.get(c, 0) + 1
    return MatchResult(_freeze(tp, fp, fn), tuple(sorted(pairs)))


def oracle_match(pred: PanopticMap, gt: PanopticMap, catalog: ClassCatalog) -> MatchResult:
    """Exhaustive all-pairs matcher built from boolean masks; slow, for cross-checking."""
    _check_inputs(pred, gt, catalog)
    offset = catalog.id_offset
    gt_void = (gt.ids // offset) == catalog.void_id

    def segments(pmap):
        out = {}
        for pid in sorted(set(pmap.ids.ravel().tolist())):
            if pid // offset != catalog.void_id:
                out[pid] = pmap.ids == pid
        return out

    gts = segments(gt)
    preds = segments(pred)
    tp: Dict[int, list] = {}
    fp: Dict[int, int] = {}
    fn: Dict[int, int] = {}
    pairs = []
    matched_g = set()
    for pid, pmask in preds.items():
        matches = []
        for gid, gmask in gts.items():
            if gid // offset != pid // offset:
                continue
            inter = int(np.sum(pmask & gmask))
            union = int(np.sum((pmask | gmask) & ~gt_void))
            if union and inter / union > 0.5:
                matches.append((gid, inter / union))
        assert len(matches) <= 1, "IoU > 0.5 admits at most one partner"
        c = pid // offset
        if matches:
            gid, v = matches[0]
            assert gid not in matched_g
            matched_g.add(gid)
            tp.setdefault(c, []).append(v)
            pairs.append((pid, gid, v))
        elif int(np.sum(pmask & gt_void)) / int(np.sum(pmask)) <= 0.5:
            fp[c] = fp.get(c, 0) + 1
    for gid in gts:
        if gid not in matched_g:
            c = gid // offset
            fn[c] = fn.get(c, 0) + 1
    return MatchResult(_freeze(tp, fp, fn), tuple(sorted(pairs)))


def pod_q(pq_out: float, pq_in: float, percent: bool = False) -> float:
    """Geometric mean of the OOD and in-distribution PQ."""
    upper = 100.0 if percent else 1.0
    for name, v in (("pq_out", pq_out), ("pq_in", pq_in)):
        if not math.isfinite(v) or v < 0:
            raise DomainError(f"{name} must be a non-negative finite number, got {v}")
        if v > upper:
            raise DomainError(f"{name}={v} exceeds {upper} ({'percent' if percent else 'fraction'} mode)")
    # Two roots instead of one: the product of two tiny scores can underflow to zero.
    return math.sqrt(pq_out) * math.sqrt(pq_in)


def class_pq(cm: ClassMatch) -> float:
    return cm.iou_sum / (cm.tp + 0.5 * cm.fp + 0.5 * cm.fn)


@dataclass(frozen=True)
class PqReport:
    per_class_pq: Mapping[int, float]
    pq_in: float
    pq_out: float
    pod_q: float
    counts: Mapping[int, Dict[str, float]] = field(default_factory=dict)
    percent: bool = False

    def to_json(self) -> dict:
        return {
            "per_class_pq": {str(k): v for k, v in sorted(self.per_class_pq.items())},
            "pq_in": self.pq_in,
            "pq_out": self.pq_out,
            "pod_q": self.pod_q,
            "counts": {str(k): dict(v) for k, v in sorted(self.counts.items())},
            "percent": self.percent,
        }

    def format_text(self, catalog: Optional[ClassCatalog] = None) -> str:
        unit = "%" if self.percent else ""
        lines = [
            f"POD-Q  {self.pod_q:.1f}{unit}" if self.percent else f"POD-Q  {self.pod_q:.4f}",
            f"PQ_out {self.pq_out:.1f}{unit}" if self.percent else f"PQ_out {self.pq_out:.4f}",
            f"PQ_in  {self.pq_in:.1f}{unit}" if self.percent else f"PQ_in  {self.pq_in:.4f}",
        ]
        for cls, v in sorted(self.per_class_pq.items()):
            name = catalog.name(cls) if catalog else str(cls)
            c = self.counts.get(cls, {})
            shown = f"{v:.1f}" if self.percent else f"{v:.4f}"
            lines.append(f"  {cls:>4} {name:<16} PQ {shown:>7}  tp {c.get('tp', 0)} fp {c.get('fp', 0)} fn {c.get('fn', 0)}")
        return "\n".join(lines) + "\n"


def pq_values(match: MatchResult, catalog: ClassCatalog, percent: bool = False) -> PqReport:
    scale = 100.0 if percent else 1.0
    per_class = {}
    counts = {}
    for cls in sorted(match.per_class):
        cm = match.per_class[cls]
        if not cm.has_evidence:
            continue
        per_class[cls] = class_pq(cm) * scale
        counts[cls] = {"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "iou_sum": cm.iou_sum}
    if catalog.ood_id not in per_class:
        raise NoOodEvidence("the OOD class has no ground-truth or predicted segments; POD-Q is undefined")
    in_dist = [per_class[c] for c in catalog.in_dist_ids if c in per_class]
    if not in_dist:
        raise NoInDistributionEvidence("no in-distribution class has any segment")
    pq_in = math.fsum(in_dist) / len(in_dist)
    pq_out = per_class[catalog.ood_id]
    return PqReport(per_class, pq_in, pq_out, pod_q(pq_out, pq_in, percent), counts, percent)


def evaluate_pairs(pairs: Iterable[Tuple[PanopticMap, PanopticMap]], catalog: ClassCatalog,
                   percent: bool = True) -> PqReport:
    """Pool matches over (prediction, ground truth) pairs held in memory."""
    total = MatchResult({})
    for pred, gt in pairs:
        total = total.merge(match_segments(pred, gt, catalog))
    return pq_values(total, catalog, percent)


def _match_files(args) -> MatchResult:
    pred_path, gt_path, catalog = args
    return match_segments(read_map(pred_path, catalog.id_offset), read_map(gt_path, catalog.id_offset), catalog)


def match_dataset(manifest: DatasetManifest, predictions: Mapping[str, os.PathLike],
                  catalog: ClassCatalog, jobs: int = 1) -> MatchResult:
    missing = [pan for _, pan in manifest.items if pan not in predictions]
    if missing:
        raise MissingPrediction(missing)
    work = [(predictions[pan], manifest.resolve(pan), catalog) for _, pan in sorted(manifest.items)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_match_files, work))
    else:
        results = [_match_files(w) for w in work]
    total = MatchResult({})
    for r in results:
        total = total.merge(r)
    return total


def evaluate_dataset(manifest: DatasetManifest, predictions: Mapping[str, os.PathLike],
                     catalog: ClassCatalog, jobs: int = 1, percent: bool = True) -> PqReport:
    """Score predictions for every manifest item.

    ``predictions`` maps each item's panoptic path string (as written in the
    manifest) to the path of its predicted map.
    """
    return pq_values(match_dataset(manifest, predictions, catalog, jobs), catalog, percent)


__all__ = [
    "ClassMatch", "MatchResult", "PqReport", "match_segments", "oracle_match", "pod_q",
    "pq_values", "class_pq", "evaluate_pairs", "match_dataset", "evaluate_dataset",
]
