"""Canonical JSON persistence for trips, derived artifacts and aux data.

One file per collection under a root directory. Every write serializes the
whole collection with sorted keys and compact separators and lands via an
atomic rename, so two stores holding equal data are byte-identical on disk.
That property is what makes replay idempotency checkable by hashing files.

A single in-process lock serializes writers; snapshots are deep copies taken
under the lock, so reads within one snapshot are mutually consistent.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .geo import GeoPoint
from .timeutil import format_instant, parse_instant
from .traces import ActivityKind, ActivityLabel, TracePoint, Trip

# record id -> record
KEYED_COLLECTIONS = (
    "trips",
    "segments",
    "enrichments",
    "jobs",
    "idempotency",
    "recordings",
    "vault",
    "consents",
)
# plain record lists (auxiliary sources)
LIST_COLLECTIONS = ("fcd", "queries", "notifications", "streets")

ALL_COLLECTIONS = KEYED_COLLECTIONS + LIST_COLLECTIONS


def canonical_json(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


class UnknownCollection(Exception):
    pass


class Store:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._data: dict[str, Any] = {}
        for name in KEYED_COLLECTIONS:
            self._data[name] = self._read_file(name, default={})
        for name in LIST_COLLECTIONS:
            self._data[name] = self._read_file(name, default=[])

    # -- file plumbing ------------------------------------------------------

    def _path(self, name: str) -> Path:
        return self.root / f"{name}.json"

    def _read_file(self, name: str, default):
        path = self._path(name)
        if not path.exists():
            return default
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)

    def _flush(self, name: str):
        path = self._path(name)
        tmp = path.with_suffix(".json.tmp")
        with open(tmp, "w", encoding="utf-8") as handle:
            handle.write(canonical_json(self._data[name]))
            handle.write("\n")
        os.replace(tmp, path)

    def _check(self, collection: str, keyed: bool):
        wanted = KEYED_COLLECTIONS if keyed else LIST_COLLECTIONS
        if collection not in wanted:
            raise UnknownCollection(collection)

    # -- keyed collections --------------------------------------------------

    def get(self, collection: str, key: str):
        self._check(collection, keyed=True)
        with self._lock:
            record = self._data[collection].get(key)
            return copy.deepcopy(record)

    def put(self, collection: str, key: str, record: dict):
        self._check(collection, keyed=True)
        with self._lock:
            self._data[collection][key] = copy.deepcopy(record)
            self._flush(collection)

    def delete(self, collection: str, key: str) -> bool:
        self._check(collection, keyed=True)
        with self._lock:
            existed = self._data[collection].pop(key, None) is not None
            if existed:
                self._flush(collection)
            return existed

    def items(self, collection: str) -> list[tuple[str, dict]]:
        self._check(collection, keyed=True)
        with self._lock:
            return [(k, copy.deepcopy(v)) for k, v in self._data[collection].items()]

    # -- list collections ---------------------------------------------------

    def extend(self, collection: str, records: list):
        self._check(collection, keyed=False)
        with self._lock:
            self._data[collection].extend(copy.deepcopy(records))
            self._flush(collection)

    def replace_all(self, collection: str, records: list):
        self._check(collection, keyed=False)
        with self._lock:
            self._data[collection] = copy.deepcopy(records)
            self._flush(collection)

    def records(self, collection: str) -> list:
        self._check(collection, keyed=False)
        with self._lock:
            return copy.deepcopy(self._data[collection])

    # -- whole-store views --------------------------------------------------

    def snapshot(self) -> "StoreSnapshot":
        with self._lock:
            return StoreSnapshot(data=copy.deepcopy(self._data))

    def fingerprint(self) -> dict[str, str]:
        """sha256 of each collection file on disk; used to prove replays
        leave the store byte-identical."""
        out = {}
        with self._lock:
            for name in ALL_COLLECTIONS:
                path = self._path(name)
                if path.exists():
                    out[name] = hashlib.sha256(path.read_bytes()).hexdigest()
        return out


@dataclass(frozen=True)
class StoreSnapshot:
    """Immutable read view over all collections."""

    data: dict[str, Any]

    def keyed(self, collection: str) -> dict[str, dict]:
        if collection not in KEYED_COLLECTIONS:
            raise UnknownCollection(collection)
        return self.data[collection]

    def records(self, collection: str) -> list:
        if collection not in LIST_COLLECTIONS:
            raise UnknownCollection(collection)
        return self.data[collection]

    def get(self, collection: str, key: str):
        return self.keyed(collection).get(key)


# ---------------------------------------------------------------------------
# wire codecs shared by ingestion, export and analytics


def point_to_record(point: TracePoint) -> dict:
    record = {
        "t": format_instant(point.timestamp),
        "lat": point.location.lat,
        "lon": point.location.lon,
        "accuracy_m": point.accuracy_m,
        "kind": point.activity.kind.value,
        "confidence": point.activity.confidence,
    }
    if point.client_speed_mps is not None:
        record["speed_mps"] = point.client_speed_mps
    return record


def point_from_record(record: dict) -> TracePoint:
    return TracePoint(
        timestamp=parse_instant(record["t"]),
        location=GeoPoint(record["lat"], record["lon"]),
        accuracy_m=record["accuracy_m"],
        activity=ActivityLabel(
            kind=ActivityKind.from_wire(record["kind"]),
            confidence=record["confidence"],
        ),
        client_speed_mps=record.get("speed_mps"),
    )


def trip_to_record(trip: Trip) -> dict:
    return {
        "trip_id": trip.trip_id,
        "owner": trip.owner,
        "points": [point_to_record(p) for p in trip.points],
    }


def trip_from_record(record: dict) -> Trip:
    return Trip(
        trip_id=record["trip_id"],
        owner=record["owner"],
        points=tuple(point_from_record(p) for p in record["points"]),
    )
