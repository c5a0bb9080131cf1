import json
import random

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from jointloc.core import CandidateSelection, ImageFeatures, Location, ReferencePoint, RssiObservation
from jointloc.db import (ChecksumError, DbError, ImageDb, ImageEntry, MalformedLineError,
                         SchemaVersionError, WifiDb, build_image_db, build_wifi_db, db_equal,
                         load_db, partition_image_db, restrict_image_db, save_db)
from jointloc.pipeline import partition_for

from conftest import small_config


def _obs(rng, n_s=3, n_ap=2):
    return RssiObservation(rng.uniform(-100, -30, size=(n_s, n_ap)))


def test_build_wifi_db_counts(survey_small):
    _, _, wifi, _ = survey_small
    rebuilt = build_wifi_db([(e.rp, e.observations) for e in wifi.entries])
    assert len(rebuilt) == 24 and all(len(e.observations) == 2 for e in rebuilt.entries)


def test_build_wifi_db_rejects_empty_and_duplicates():
    rng = np.random.default_rng(0)
    with pytest.raises(DbError):
        build_wifi_db([])
    rp = ReferencePoint(0, Location(0, 0, 0))
    with pytest.raises(DbError):
        build_wifi_db([(rp, [_obs(rng)]), (rp, [_obs(rng)])])


def test_build_wifi_db_canonical_order(tmp_path):
    rng = np.random.default_rng(1)
    survey = [(ReferencePoint(i, Location(i, 0, 0)), [_obs(rng)]) for i in range(6)]
    shuffled = survey[:]
    random.Random(3).shuffle(shuffled)
    save_db(build_wifi_db(survey), tmp_path / "a.jsonl")
    save_db(build_wifi_db(shuffled), tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_partition_index_agrees_with_rp_membership(survey_small):
    cfg, _, _, images = survey_small
    part = partition_for(cfg)
    rp_locs = {r.location: r.index for r in cfg.reference_points()}
    for j, ks in images.area_index.items():
        for k in ks:
            loc = images.entries[k].location
            # brute-force point-in-box on the partition's boxes
            boxes = [a.index for a in part.areas if np.all(loc.as_array() >= a.lo) and np.all(loc.as_array() <= a.hi)]
            assert j == min(boxes)
            if loc in rp_locs:
                assert j == part.rp_membership[rp_locs[loc]]


def test_partition_single_area(survey_small):
    cfg, _, _, images = survey_small
    one = partition_for(cfg.replace(n_cells_x=1, n_cells_y=1, j_star=1))
    idx = partition_image_db(images, one).area_index
    assert list(idx) == [0] and idx[0] == tuple(range(len(images)))


def test_partition_default_fifteen_lists(survey_small):
    _, _, _, images = survey_small
    assert len(images.area_index) == 15
    assert sum(len(v) for v in images.area_index.values()) == len(images)
    flat = [k for v in images.area_index.values() for k in v]
    assert sorted(flat) == list(range(len(images)))


def test_partition_rejects_entry_outside(survey_small):
    cfg, _, _, images = survey_small
    bad = ImageDb(images.entries + (ImageEntry(Location(50, 1, 0.05), images.entries[0].features),))
    with pytest.raises(DbError, match="entry 62"):
        partition_image_db(bad, partition_for(cfg))


def test_restrict_all_and_single(survey_small):
    _, _, _, images = survey_small
    everything = CandidateSelection(tuple(range(15)), np.full(15, 1 / 15))
    assert len(restrict_image_db(images, everything)) == len(images)
    one = restrict_image_db(images, CandidateSelection((7,), [1.0]))
    assert list(one.indices) == list(images.area_index[7])
    assert one[0] is images.entries[images.area_index[7][0]]


def test_restrict_random_four_matches_location_filter(survey_small):
    cfg, _, _, images = survey_small
    part = partition_for(cfg)
    rng = np.random.default_rng(5)
    for _ in range(20):
        pick = tuple(int(j) for j in rng.choice(15, size=4, replace=False))
        view = restrict_image_db(images, CandidateSelection(pick, [0.25] * 4))
        brute = [k for k, e in enumerate(images.entries)
                 if min(a.index for a in part.areas if a.contains(e.location)) in pick]
        assert list(view.indices) == brute
        assert len(view) == sum(len(images.area_index[j]) for j in pick)


def test_restrict_errors(survey_small):
    _, _, _, images = survey_small
    with pytest.raises(DbError):
        restrict_image_db(images, CandidateSelection((99,), [1.0]))
    with pytest.raises(DbError):
        restrict_image_db(ImageDb(images.entries), CandidateSelection((0,), [1.0]))


def test_round_trip_default_dbs(survey_small, tmp_path):
    _, _, wifi, images = survey_small
    for name, db in (("w", wifi), ("i", images)):
        save_db(db, tmp_path / name)
        assert db_equal(load_db(tmp_path / name), db)


def test_header_layout(survey_small, tmp_path):
    _, _, wifi, _ = survey_small
    save_db(wifi, tmp_path / "w.jsonl")
    lines = (tmp_path / "w.jsonl").read_text().splitlines()
    header = json.loads(lines[0])
    assert header["schema_version"] == 1 and header["kind"] == "wifi"
    assert header["config_hash"] == wifi.config_hash and header["seed"] == wifi.seed
    rec = json.loads(lines[1])
    assert set(rec) == {"rp", "location", "payload"} and set(rec["location"]) == {"x", "y", "z"}
    assert len(lines) == 25


def test_truncated_file_reports_line(survey_small, tmp_path):
    _, _, wifi, _ = survey_small
    p = tmp_path / "w.jsonl"
    save_db(wifi, p)
    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    with pytest.raises(MalformedLineError) as e:
        load_db(p)
    assert e.value.line_no > 1


def test_missing_lines_report_line(survey_small, tmp_path):
    _, _, wifi, _ = survey_small
    p = tmp_path / "w.jsonl"
    save_db(wifi, p)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:10]) + "\n")
    with pytest.raises(MalformedLineError) as e:
        load_db(p)
    assert e.value.line_no == 11


def test_unknown_schema_version(survey_small, tmp_path):
    _, _, wifi, _ = survey_small
    p = tmp_path / "w.jsonl"
    save_db(wifi, p)
    lines = p.read_text().splitlines()
    h = json.loads(lines[0])
    h["schema_version"] = 0
    p.write_text("\n".join([json.dumps(h)] + lines[1:]) + "\n")
    with pytest.raises(SchemaVersionError):
        load_db(p)


def test_checksum_mismatch(survey_small, tmp_path):
    _, _, wifi, _ = survey_small
    p = tmp_path / "w.jsonl"
    save_db(wifi, p)
    lines = p.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["payload"][0][0][0] -= 1.0
    lines[1] = json.dumps(rec, separators=(",", ":"))
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ChecksumError):
        load_db(p)


def _random_wifi(rng) -> WifiDb:
    n_rp, n_s, n_ap, n_w = (int(v) for v in rng.integers(1, 6, size=4))
    return build_wifi_db(
        [(ReferencePoint(i, Location(*rng.normal(size=3))), [_obs(rng, n_s, n_ap) for _ in range(n_w)])
         for i in range(n_rp)], config_hash=f"{rng.integers(1 << 30):x}", seed=int(rng.integers(100)))


def _random_image(rng) -> ImageDb:
    n, n_p, f, n_i = (int(v) for v in rng.integers(1, 5, size=4))
    entries = [ImageEntry(Location(*rng.uniform(0, 4, size=3)),
                          tuple(ImageFeatures(rng.normal(size=(n_p, f))) for _ in range(n_i)),
                          tuple(_obs(rng) for _ in range(n_i))) for _ in range(n)]
    db = build_image_db(entries, "abc", 3)
    if rng.random() < 0.5:
        from jointloc.core import make_grid_partition
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            part = make_grid_partition((0, 0, 0), (4, 4, 4), 2, 2,
                                       [ReferencePoint(0, Location(1, 1, 1))])
        db = partition_image_db(db, part)
    return db


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(seed=st.integers(0, 2**32 - 1))
def test_round_trip_random_databases(tmp_path, seed):
    rng = np.random.default_rng(seed)
    for db in (_random_wifi(rng), _random_image(rng)):
        p = tmp_path / "db.jsonl"
        save_db(db, p)
        assert db_equal(load_db(p), db)
