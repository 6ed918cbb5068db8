"""Benchmark toolkit for panoptic out-of-distribution segmentation."""

from .core import (
    ClassCatalog,
    DatasetManifest,
    PanopticMap,
    Segment,
    SegmentTable,
    cityscapes_catalog,
    decode_panoptic,
    validate_map,
)
from .metrics import MatchResult, PqReport, evaluate_dataset, match_segments, oracle_match, pod_q, pq_values

__version__ = "0.1.0"
