import json

import numpy as np
import pytest

from podseg.core import (
    ClassCatalog,
    DatasetManifest,
    PanopticMap,
    Segment,
    canonicalize_instances,
    decode_panoptic,
    encode_panoptic,
    load_catalog,
    read_map,
    segment_index,
    validate_map,
    write_map,
)
from podseg.errors import CatalogError, FormatError, UnknownClass
from podseg.sampling import random_gt


def test_catalog_rejects_overlap():
    with pytest.raises(CatalogError):
        ClassCatalog(frozenset({7, 8}), frozenset({8, 24}), ood_id=50)


def test_catalog_rejects_ood_equal_void():
    with pytest.raises(CatalogError):
        ClassCatalog(frozenset({7}), frozenset({24}), ood_id=255, void_id=255)


def test_catalog_rejects_id_at_offset():
    with pytest.raises(CatalogError):
        ClassCatalog(frozenset({7}), frozenset({1000}), ood_id=50)


def test_catalog_json_round_trip(tmp_path, catalog):
    path = tmp_path / "cat.json"
    path.write_text(json.dumps(catalog.to_json()))
    loaded = load_catalog(path)
    assert loaded == catalog
    assert loaded.name(26) == "car"


def test_channel_ids_put_ood_last(catalog):
    ch = catalog.channel_ids
    assert ch[-1] == catalog.ood_id
    assert ch[:-1] == sorted(ch[:-1])
    assert catalog.void_id not in ch


def test_panoptic_map_is_read_only():
    m = PanopticMap(np.zeros((2, 2), dtype=np.int64) + 7000)
    with pytest.raises(ValueError):
        m.ids[0, 0] = 1


def test_decode_all_void_is_empty(catalog):
    m = PanopticMap.filled(4, 4, catalog.void_id)
    assert len(decode_panoptic(m, catalog)) == 0


def test_decode_single_car(catalog):
    ids = np.full((5, 5), catalog.void_panoptic_id(), dtype=np.int64)
    ids[1:3, 2:4] = 26001
    table = decode_panoptic(PanopticMap(ids), catalog)
    assert table.entries == (Segment(26, 1, 4, (1, 2, 3, 4)),)


def test_decode_unknown_class(catalog):
    ids = np.full((2, 2), 7000, dtype=np.int64)
    ids[0, 0] = 99000
    with pytest.raises(UnknownClass):
        decode_panoptic(PanopticMap(ids), catalog)


def test_decode_counts_match_histogram(small):
    rng = np.random.default_rng(5)
    for _ in range(25):
        m = random_gt(rng, small)
        table = decode_panoptic(m, small)
        void = small.void_panoptic_id()
        assert table.total_pixels() == int(np.count_nonzero(m.ids != void))
        for seg in table:
            assert seg.pixel_count == int(np.count_nonzero(m.ids == seg.panoptic_id()))


def test_stuff_yields_single_segment_per_image(catalog):
    ids = np.full((4, 6), 7000, dtype=np.int64)
    ids[:, 3:] = 11000
    ids[0, 5] = 7000  # disconnected road pixel still belongs to the one road segment
    table = decode_panoptic(PanopticMap(ids), catalog)
    assert [s.class_id for s in table] == [7, 11]


def test_validate_valid_map(catalog):
    ids = np.full((3, 3), 7000, dtype=np.int64)
    ids[0, 0] = 26001
    ids[2, 2] = catalog.void_panoptic_id()
    assert validate_map(PanopticMap(ids), catalog) == {}


@pytest.mark.parametrize(
    "pid, rule",
    [
        (7003, "stuff instance nonzero"),
        (26000, "thing instance zero"),
        (50000, "ood instance zero"),
        (255004, "void instance nonzero"),
        (99000, "unknown class"),
        (1000 * 1000, "class id out of range"),
        (-1, "negative id"),
    ],
)
def test_validate_reports_each_rule(catalog, pid, rule):
    ids = np.full((2, 2), 7000, dtype=np.int64)
    ids[1, 1] = pid
    assert validate_map(PanopticMap(ids), catalog) == {rule: 1}


def test_validate_offset_mismatch(catalog):
    m = PanopticMap(np.full((2, 2), 70, dtype=np.int64), id_offset=10)
    assert "id offset mismatch" in validate_map(m, catalog)


def test_encode_decode_round_trip(small):
    rng = np.random.default_rng(11)
    for _ in range(25):
        m = random_gt(rng, small)
        table = decode_panoptic(m, small)
        assert encode_panoptic(table, segment_index(m, table), small) == m


def test_segment_index_empty_table(small):
    m = PanopticMap.filled(3, 3, small.void_id)
    table = decode_panoptic(m, small)
    assert (segment_index(m, table) == -1).all()
    assert encode_panoptic(table, segment_index(m, table), small) == m


def test_canonicalize_orders_by_center(catalog):
    ids = np.full((6, 6), 7000, dtype=np.int64)
    ids[4:6, 4:6] = 26001  # lower right gets id 1 before canonicalization
    ids[0:2, 0:2] = 26002
    canon = canonicalize_instances(PanopticMap(ids), catalog)
    assert canon.ids[0, 0] == 26001 and canon.ids[5, 5] == 26002


def test_map_file_round_trip(tmp_path):
    ids = np.arange(12, dtype=np.int64).reshape(3, 4) * 1000 + 255000
    path = tmp_path / "m.pan"
    write_map(path, PanopticMap(ids))
    raw = path.read_bytes()
    assert raw[:4] == b"PODS" and int.from_bytes(raw[4:6], "little") == 4 and int.from_bytes(raw[6:8], "little") == 3
    assert read_map(path) == PanopticMap(ids)


def test_map_file_bad_magic(tmp_path):
    path = tmp_path / "bad.pan"
    path.write_bytes(b"XXXX" + b"\0" * 4)
    with pytest.raises(FormatError):
        read_map(path)


def test_map_file_truncated(tmp_path):
    path = tmp_path / "short.pan"
    path.write_bytes(b"PODS\x02\x00\x02\x00" + b"\0" * 8)
    with pytest.raises(FormatError):
        read_map(path)


def test_manifest_round_trip(tmp_path):
    m = DatasetManifest("test", (("images/0.png", "panoptic/0.pan"),), ("fan",), 4)
    m.save(tmp_path / "manifest.json")
    loaded = DatasetManifest.load(tmp_path / "manifest.json")
    assert loaded == m
    assert loaded.resolve("panoptic/0.pan") == tmp_path / "panoptic/0.pan"
    assert set(json.loads((tmp_path / "manifest.json").read_text())) == {"split", "items", "ood_categories", "seed"}


def test_manifest_rejects_duplicate_paths():
    with pytest.raises(FormatError):
        DatasetManifest("train", (("a.png", "a.pan"), ("b.png", "a.pan")))


def test_manifest_rejects_unknown_split():
    with pytest.raises(FormatError):
        DatasetManifest("val", ())
