"""WiFi and image survey databases, per-area indexing and JSON-Lines persistence.

Every persisted artifact (databases, models, query sets) shares one envelope:
line 1 is a header object, each following line is one record::

    {"schema_version": 1, "kind": "wifi", "config_hash": "...", "seed": 1,
     "count": 24, "checksum": "<sha256 of the record lines>"}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import (AreaPartition, CandidateSelection, ImageFeatures, JointLocError, Location,
                   ReferencePoint, RssiObservation)

SCHEMA_VERSION = 1


class DbError(JointLocError, ValueError):
    pass


class DbFormatError(DbError):
    pass


class SchemaVersionError(DbFormatError):
    pass


class MalformedLineError(DbFormatError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class ChecksumError(DbFormatError):
    pass


class HashMismatchError(DbError):
    """An artifact was built under a different configuration than its consumer."""


@dataclass(frozen=True)
class WifiEntry:
    rp: ReferencePoint
    observations: tuple[RssiObservation, ...]


@dataclass(frozen=True)
class WifiDb:
    entries: tuple[WifiEntry, ...]
    config_hash: str = ""
    seed: int = 0

    def __len__(self):
        return len(self.entries)

    @property
    def reference_points(self) -> list[ReferencePoint]:
        return [e.rp for e in self.entries]


@dataclass(frozen=True)
class ImageEntry:
    """Images surveyed at one location, with the RSSI recorded alongside each round."""

    location: Location
    features: tuple[ImageFeatures, ...]
    rssi: tuple[RssiObservation, ...] = ()


@dataclass(frozen=True)
class ImageDb:
    entries: tuple[ImageEntry, ...]
    area_index: dict[int, tuple[int, ...]] | None = None
    config_hash: str = ""
    seed: int = 0

    def __len__(self):
        return len(self.entries)

    def locations(self) -> np.ndarray:
        return np.array([e.location.as_array() for e in self.entries]).reshape(-1, 3)


class ImageDbView:
    """Read-only subset of an ImageDb; shares the parent's entries."""

    def __init__(self, db: ImageDb, indices: Sequence[int]):
        self.db = db
        self.indices = tuple(indices)

    def __len__(self):
        return len(self.indices)

    def __iter__(self) -> Iterator[ImageEntry]:
        for i in self.indices:
            yield self.db.entries[i]

    def __getitem__(self, k: int) -> ImageEntry:
        return self.db.entries[self.indices[k]]


def build_wifi_db(survey: Iterable[tuple[ReferencePoint, Sequence[RssiObservation]]],
                  config_hash: str = "", seed: int = 0) -> WifiDb:
    entries = {}
    for rp, obs in survey:
        if rp.index in entries:
            raise DbError(f"duplicate reference point index {rp.index}")
        obs = tuple(obs)
        if not obs:
            raise DbError(f"reference point {rp.index} has no observations")
        entries[rp.index] = WifiEntry(rp, obs)
    if not entries:
        raise DbError("survey is empty")
    if sorted(entries) != list(range(len(entries))):
        raise DbError("reference point indices must be contiguous from 0")
    shapes = {o.shape for e in entries.values() for o in e.observations}
    if len(shapes) != 1:
        raise DbError(f"inconsistent RSSI block shapes: {sorted(shapes)}")
    return WifiDb(tuple(entries[i] for i in range(len(entries))), config_hash, seed)


def build_image_db(entries: Iterable[ImageEntry], config_hash: str = "", seed: int = 0) -> ImageDb:
    entries = sorted(entries, key=lambda e: (e.location.x, e.location.y, e.location.z))
    if not entries:
        raise DbError("image survey is empty")
    return ImageDb(tuple(entries), None, config_hash, seed)


def partition_image_db(db: ImageDb, partition: AreaPartition) -> ImageDb:
    """Index entries by the area containing their location."""
    index: dict[int, list[int]] = {a.index: [] for a in partition.areas}
    for k, e in enumerate(db.entries):
        j = partition.area_of(e.location)
        if j is None:
            raise DbError(f"image entry {k} at {e.location} lies outside every area")
        index[j].append(k)
    return ImageDb(db.entries, {j: tuple(v) for j, v in index.items()}, db.config_hash, db.seed)


def restrict_image_db(db: ImageDb, selection: CandidateSelection) -> ImageDbView:
    if db.area_index is None:
        raise DbError("image database has no area index; call partition_image_db first")
    idx = []
    for j in selection.area_indices:
        if j not in db.area_index:
            raise DbError(f"selection references unknown area {j}")
        idx.extend(db.area_index[j])
    return ImageDbView(db, sorted(idx))


# ---------------------------------------------------------------- envelope

def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_envelope(path, kind: str, records: Sequence[dict], config_hash: str, seed: int,
                   extra: dict | None = None) -> None:
    body = [_dump(r) for r in records]
    digest = hashlib.sha256("\n".join(body).encode("utf-8")).hexdigest()
    header = {"schema_version": SCHEMA_VERSION, "kind": kind, "config_hash": config_hash,
              "seed": int(seed), "count": len(body), "checksum": digest}
    header.update(extra or {})
    text = "\n".join([_dump(header)] + body) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def read_envelope(path, kind: str | None = None) -> tuple[dict, list[dict]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DbError(f"cannot read {path}: {e}") from e
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedLineError(1, "missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise MalformedLineError(1, f"header is not JSON ({e.msg})") from e
    if not isinstance(header, dict) or "schema_version" not in header:
        raise MalformedLineError(1, "header lacks schema_version")
    if header["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: schema_version {header['schema_version']!r}, expected {SCHEMA_VERSION}")
    for key in ("kind", "config_hash", "seed", "count", "checksum"):
        if key not in header:
            raise MalformedLineError(1, f"header lacks {key}")
    if kind is not None and header["kind"] != kind:
        raise DbFormatError(f"{path} holds kind {header['kind']!r}, expected {kind!r}")
    records = []
    for n, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedLineError(n, f"not valid JSON ({e.msg})") from e
        if not isinstance(rec, dict):
            raise MalformedLineError(n, "record is not an object")
        records.append(rec)
    if len(records) != header["count"]:
        raise MalformedLineError(len(records) + 2,
                                 f"expected {header['count']} records, found {len(records)}")
    digest = hashlib.sha256("\n".join(lines[1:]).encode("utf-8")).hexdigest()
    if digest != header["checksum"]:
        raise ChecksumError(f"{path}: checksum mismatch")
    return header, records


def _loc_rec(loc: Location) -> dict:
    return loc.to_dict()


def _record_error(n: int, e: Exception) -> MalformedLineError:
    return MalformedLineError(n + 2, f"bad record ({type(e).__name__}: {e})")


def save_db(db: WifiDb | ImageDb, path) -> None:
    if isinstance(db, WifiDb):
        records = [{"rp": e.rp.index, "location": _loc_rec(e.rp.location),
                    "payload": [o.samples.tolist() for o in e.observations]} for e in db.entries]
        write_envelope(path, "wifi", records, db.config_hash, db.seed)
    elif isinstance(db, ImageDb):
        area_of = {}
        if db.area_index is not None:
            area_of = {k: j for j, ks in db.area_index.items() for k in ks}
        records = []
        for k, e in enumerate(db.entries):
            records.append({
                "location": _loc_rec(e.location),
                "area": area_of.get(k),
                "payload": {"features": [f.features.tolist() for f in e.features],
                            "rssi": [r.samples.tolist() for r in e.rssi]},
            })
        # listed explicitly so empty areas survive a reload
        areas = None if db.area_index is None else sorted(db.area_index)
        write_envelope(path, "image", records, db.config_hash, db.seed, {"areas": areas})
    else:
        raise TypeError(f"cannot save {type(db).__name__}")


def load_db(path) -> WifiDb | ImageDb:
    header, records = read_envelope(path)
    kind = header["kind"]
    if kind == "wifi":
        entries = []
        for n, r in enumerate(records):
            try:
                rp = ReferencePoint(int(r["rp"]), Location.from_dict(r["location"]))
                entries.append((rp, [RssiObservation(np.array(m, dtype=float)) for m in r["payload"]]))
            except (KeyError, TypeError, ValueError) as e:
                raise _record_error(n, e) from e
        return build_wifi_db(entries, header["config_hash"], header["seed"])
    if kind == "image":
        area_ids = header.get("areas")
        entries, areas = [], []
        for n, r in enumerate(records):
            try:
                p = r["payload"]
                entries.append(ImageEntry(
                    Location.from_dict(r["location"]),
                    tuple(ImageFeatures(np.array(m, dtype=float)) for m in p["features"]),
                    tuple(RssiObservation(np.array(m, dtype=float)) for m in p["rssi"]),
                ))
                areas.append(r.get("area"))
            except (KeyError, TypeError, ValueError) as e:
                raise _record_error(n, e) from e
        index = None
        if area_ids is not None:
            index = {int(j): [] for j in area_ids}
            for k, j in enumerate(areas):
                if j is None or int(j) not in index:
                    raise MalformedLineError(k + 2, "entry has no valid area")
                index[int(j)].append(k)
            index = {j: tuple(v) for j, v in index.items()}
        return ImageDb(tuple(entries), index, header["config_hash"], header["seed"])
    raise DbFormatError(f"{path} holds kind {kind!r}, which is not a database")


def db_equal(a, b) -> bool:
    """Structural equality of two databases, including metadata and area index."""
    if type(a) is not type(b) or len(a) != len(b):
        return False
    if (a.config_hash, a.seed) != (b.config_hash, b.seed):
        return False
    if isinstance(a, ImageDb) and a.area_index != b.area_index:
        return False
    return a.entries == b.entries
