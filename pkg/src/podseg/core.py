"""Panoptic encoding, class catalog, dataset manifest and map validation.

A panoptic id packs ``class_id * id_offset + instance_id`` into one non-negative
integer. Stuff and void segments always carry instance 0; thing and OOD
segments carry instance ids starting at 1.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import CatalogError, FormatError, UnknownClass

MAP_MAGIC = b"PODS"
_HEADER = struct.Struct("<4sHH")


@dataclass(frozen=True)
class ClassCatalog:
    stuff_ids: frozenset
    thing_ids: frozenset
    ood_id: int
    void_id: int = 255
    id_offset: int = 1000
    names: Mapping[int, str] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "stuff_ids", frozenset(int(i) for i in self.stuff_ids))
        object.__setattr__(self, "thing_ids", frozenset(int(i) for i in self.thing_ids))
        groups = [self.stuff_ids, self.thing_ids, {self.ood_id}, {self.void_id}]
        seen = set()
        for group in groups:
            if seen & set(group):
                raise CatalogError(f"class ids overlap: {sorted(seen & set(group))}")
            seen |= set(group)
        if self.id_offset < 2:
            raise CatalogError("id_offset must be at least 2")
        bad = [i for i in seen if i < 0 or i >= self.id_offset]
        if bad:
            raise CatalogError(f"class ids outside [0, {self.id_offset}): {sorted(bad)}")

    @property
    def in_dist_ids(self) -> List[int]:
        return sorted(self.stuff_ids | self.thing_ids)

    @property
    def known_ids(self) -> frozenset:
        """Every id a valid map may contain, void included."""
        return self.stuff_ids | self.thing_ids | {self.ood_id, self.void_id}

    @property
    def channel_ids(self) -> List[int]:
        """Class id of each semantic logit channel: in-distribution ids ascending, OOD last."""
        return self.in_dist_ids + [self.ood_id]

    def is_countable(self, class_id: int) -> bool:
        return class_id in self.thing_ids or class_id == self.ood_id

    def name(self, class_id: int) -> str:
        return self.names.get(class_id, str(class_id))

    def void_panoptic_id(self) -> int:
        return self.void_id * self.id_offset

    def to_json(self) -> dict:
        return {
            "stuff": {str(i): self.name(i) for i in sorted(self.stuff_ids)},
            "thing": {str(i): self.name(i) for i in sorted(self.thing_ids)},
            "ood": self.ood_id,
            "void": self.void_id,
            "id_offset": self.id_offset,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "ClassCatalog":
        def ids_and_names(section):
            if isinstance(section, Mapping):
                return {int(k): str(v) for k, v in section.items()}
            return {int(k): str(k) for k in section}

        stuff = ids_and_names(data["stuff"])
        thing = ids_and_names(data["thing"])
        names = {**stuff, **thing}
        ood = int(data["ood"])
        names.setdefault(ood, "ood")
        return cls(
            stuff_ids=frozenset(stuff),
            thing_ids=frozenset(thing),
            ood_id=ood,
            void_id=int(data.get("void", 255)),
            id_offset=int(data.get("id_offset", 1000)),
            names=names,
        )


_CITYSCAPES_STUFF = {
    7: "road", 8: "sidewalk", 11: "building", 12: "wall", 13: "fence", 17: "pole",
    19: "traffic light", 20: "traffic sign", 21: "vegetation", 22: "terrain", 23: "sky",
}
_CITYSCAPES_THING = {
    24: "person", 25: "rider", 26: "car", 27: "truck", 28: "bus", 31: "train",
    32: "motorcycle", 33: "bicycle",
}


def cityscapes_catalog() -> ClassCatalog:
    """11 stuff + 8 thing classes with Cityscapes label ids, OOD id 50."""
    names = {**_CITYSCAPES_STUFF, **_CITYSCAPES_THING, 50: "ood", 255: "void"}
    return ClassCatalog(
        stuff_ids=frozenset(_CITYSCAPES_STUFF),
        thing_ids=frozenset(_CITYSCAPES_THING),
        ood_id=50,
        void_id=255,
        names=names,
    )


def load_catalog(path: Optional[os.PathLike]) -> ClassCatalog:
    if path is None:
        return cityscapes_catalog()
    with open(path, "r", encoding="utf-8") as fh:
        return ClassCatalog.from_json(json.load(fh))


@dataclass(frozen=True, eq=False)
class PanopticMap:
    """Read-only dense grid of panoptic ids."""

    ids: np.ndarray
    id_offset: int = 1000

    def __post_init__(self):
        arr = np.array(self.ids, dtype=np.int64, copy=True)
        if arr.ndim != 2:
            raise FormatError(f"panoptic map must be 2-D, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "ids", arr)

    @classmethod
    def from_parts(cls, class_ids, instance_ids, id_offset: int = 1000) -> "PanopticMap":
        class_ids = np.asarray(class_ids, dtype=np.int64)
        instance_ids = np.asarray(instance_ids, dtype=np.int64)
        return cls(class_ids * id_offset + instance_ids, id_offset)

    @classmethod
    def filled(cls, height: int, width: int, class_id: int, id_offset: int = 1000) -> "PanopticMap":
        return cls(np.full((height, width), class_id * id_offset, dtype=np.int64), id_offset)

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.ids.shape

    @property
    def class_ids(self) -> np.ndarray:
        return self.ids // self.id_offset

    @property
    def instance_ids(self) -> np.ndarray:
        return self.ids % self.id_offset

    def __eq__(self, other):
        if not isinstance(other, PanopticMap):
            return NotImplemented
        return self.id_offset == other.id_offset and np.array_equal(self.ids, other.ids)

    __hash__ = None


@dataclass(frozen=True)
class Segment:
    class_id: int
    instance_id: int
    pixel_count: int
    bbox: Tuple[int, int, int, int]  # (y0, x0, y1, x1), end-exclusive

    def panoptic_id(self, id_offset: int = 1000) -> int:
        return self.class_id * id_offset + self.instance_id


@dataclass(frozen=True)
class SegmentTable:
    entries: Tuple[Segment, ...]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_class(self, class_id: int) -> List[Segment]:
        return [s for s in self.entries if s.class_id == class_id]

    def total_pixels(self) -> int:
        return sum(s.pixel_count for s in self.entries)


def validate_map(pmap: PanopticMap, catalog: ClassCatalog) -> Dict[str, int]:
    """Count pixels breaking each encoding rule; an empty dict means the map is valid."""
    ids = pmap.ids
    report: Dict[str, int] = {}

    def note(rule, mask):
        n = int(np.count_nonzero(mask))
        if n:
            report[rule] = n

    if pmap.id_offset != catalog.id_offset:
        report["id offset mismatch"] = ids.size
        return report
    note("negative id", ids < 0)
    cls = np.where(ids < 0, 0, ids) // catalog.id_offset
    inst = np.where(ids < 0, 0, ids) % catalog.id_offset
    out_of_range = (ids >= 0) & (cls >= catalog.id_offset)
    note("class id out of range", out_of_range)
    in_range = (ids >= 0) & ~out_of_range
    known = np.isin(cls, list(catalog.known_ids))
    note("unknown class", in_range & ~known)
    note("stuff instance nonzero", in_range & np.isin(cls, list(catalog.stuff_ids)) & (inst != 0))
    note("void instance nonzero", in_range & (cls == catalog.void_id) & (inst != 0))
    note("thing instance zero", in_range & np.isin(cls, list(catalog.thing_ids)) & (inst == 0))
    note("ood instance zero", in_range & (cls == catalog.ood_id) & (inst == 0))
    return report


def decode_panoptic(pmap: PanopticMap, catalog: ClassCatalog) -> SegmentTable:
    """One entry per non-void panoptic id, ordered by id."""
    segment_ids, inverse, counts = np.unique(pmap.ids, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(pmap.shape)
    boxes = ndimage.find_objects(inverse + 1)
    entries = []
    for k, (pid, count) in enumerate(zip(segment_ids.tolist(), counts.tolist())):
        class_id, instance_id = divmod(pid, catalog.id_offset)
        if class_id == catalog.void_id:
            continue
        if class_id not in catalog.known_ids:
            raise UnknownClass(f"class id {class_id} (panoptic id {pid}) is not in the catalog")
        ys, xs = boxes[k]
        entries.append(Segment(class_id, instance_id, count, (ys.start, xs.start, ys.stop, xs.stop)))
    return SegmentTable(tuple(entries))


def segment_index(pmap: PanopticMap, table: SegmentTable) -> np.ndarray:
    """Grid holding each pixel's entry index in ``table``; -1 marks pixels outside every entry."""
    offset = pmap.id_offset
    keys = np.array([s.panoptic_id(offset) for s in table.entries], dtype=np.int64)
    if not len(keys):
        return np.full(pmap.shape, -1, dtype=np.int64)
    order = np.argsort(keys)
    pos = np.clip(np.searchsorted(keys[order], pmap.ids), 0, len(keys) - 1)
    hit = keys[order][pos] == pmap.ids
    return np.where(hit, order[pos], -1)


def encode_panoptic(table: SegmentTable, index: np.ndarray, catalog: ClassCatalog) -> PanopticMap:
    """Inverse of ``segment_index``: rebuild ids from entries and a per-pixel entry index."""
    lut = np.array(
        [s.panoptic_id(catalog.id_offset) for s in table.entries] + [catalog.void_panoptic_id()],
        dtype=np.int64,
    )
    index = np.asarray(index)
    return PanopticMap(lut[np.where(index < 0, len(table.entries), index)], catalog.id_offset)


def canonicalize_instances(pmap: PanopticMap, catalog: ClassCatalog) -> PanopticMap:
    """Renumber instances 1..n per class in raster order of their rounded mass centers.

    This is the numbering the center-based fusion produces, so canonical ground
    truth can be compared pixel-exactly with fused predictions.
    """
    ids = pmap.ids.copy()
    out = ids.copy()
    yy, xx = np.indices(pmap.shape)
    per_class: Dict[int, list] = {}
    for pid in np.unique(ids).tolist():
        cls, inst = divmod(pid, catalog.id_offset)
        if not catalog.is_countable(cls):
            continue
        mask = ids == pid
        cy = round_half_up(yy[mask].mean())
        cx = round_half_up(xx[mask].mean())
        per_class.setdefault(cls, []).append((cy, cx, pid))
    for cls, items in per_class.items():
        for new_inst, (_, _, pid) in enumerate(sorted(items), start=1):
            out[ids == pid] = cls * catalog.id_offset + new_inst
    return PanopticMap(out, catalog.id_offset)


def round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


# ---------------------------------------------------------------- file formats


def write_map(path: os.PathLike, pmap: PanopticMap) -> None:
    h, w = pmap.shape
    if h > 0xFFFF or w > 0xFFFF:
        raise FormatError("map dimensions exceed 16 bits")
    if pmap.ids.min(initial=0) < 0 or pmap.ids.max(initial=0) > 0xFFFFFFFF:
        raise FormatError("panoptic ids must fit in unsigned 32 bits")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAP_MAGIC, w, h))
        fh.write(pmap.ids.astype("<u4").tobytes(order="C"))


def read_map(path: os.PathLike, id_offset: int = 1000) -> PanopticMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, w, h = _HEADER.unpack_from(raw)
    if magic != MAP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != 4 * w * h:
        raise FormatError(f"{path}: expected {4 * w * h} payload bytes, found {len(body)}")
    grid = np.frombuffer(body, dtype="<u4").reshape(h, w)
    return PanopticMap(grid.astype(np.int64), id_offset)


@dataclass(frozen=True)
class DatasetManifest:
    split: str
    items: Tuple[Tuple[str, str], ...]
    ood_categories: Tuple[str, ...] = ()
    seed: int = 0
    root: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise FormatError(f"split must be 'train' or 'test', got {self.split!r}")
        items = tuple((str(a), str(b)) for a, b in self.items)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "ood_categories", tuple(self.ood_categories))
        images = [a for a, _ in items]
        pans = [b for _, b in items]
        if len(set(images)) != len(images) or len(set(pans)) != len(pans):
            raise FormatError("manifest paths must be unique")

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    def to_json(self) -> dict:
        return {
            "split": self.split,
            "items": [list(item) for item in self.items],
            "ood_categories": list(self.ood_categories),
            "seed": self.seed,
        }

    def save(self, path: os.PathLike) -> None:
        write_json(path, self.to_json())

    @classmethod
    def load(cls, path: os.PathLike) -> "DatasetManifest":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        try:
            return cls(
                split=data["split"],
                items=tuple(tuple(item) for item in data["items"]),
                ood_categories=tuple(data.get("ood_categories", ())),
                seed=int(data.get("seed", 0)),
                root=path.parent,
            )
        except KeyError as exc:
            raise FormatError(f"{path}: missing key {exc}") from None

    def load_gt(self, index: int, id_offset: int = 1000) -> PanopticMap:
        return read_map(self.resolve(self.items[index][1]), id_offset)


def write_json(path: os.PathLike, data) -> None:
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def load_maps(paths: Iterable[os.PathLike], id_offset: int = 1000) -> List[PanopticMap]:
    return [read_map(p, id_offset) for p in paths]


def read_image(path: os.PathLike) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_image(path: os.PathLike, rgb: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path, format="PNG")


__all__ = [
    "ClassCatalog", "PanopticMap", "Segment", "SegmentTable", "DatasetManifest",
    "cityscapes_catalog", "load_catalog", "validate_map", "decode_panoptic",
    "segment_index", "encode_panoptic", "canonicalize_instances", "write_map",
    "read_map", "write_json", "read_image", "write_image", "round_half_up",
]
