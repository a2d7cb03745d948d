"""Digital-twin replica of core routers.

Each :class:`RouterTwin` keeps only the latest reading per sensor path.
Readings are applied last-write-wins by timestamp, with ties going to the
later arrival.  Timestamps are integer simulation ticks supplied by the
replay harness, never wall time.
"""

from __future__ import annotations

import itertools
import json
import math
import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import (
    DuplicateTwin,
    IncompleteState,
    InvalidValue,
    NotFound,
    SelfRelation,
    UnknownSensor,
)
from .yang import KpiManifest


@dataclass(frozen=True, slots=True)
class SensorReading:
    twin_id: object
    path: str
    value: float
    timestamp: int


@dataclass(frozen=True)
class SensorFrame:
    """Immutable copy of a twin's sensor state."""

    twin_id: object
    last_sync: int
    values: Mapping[str, float]

    def __len__(self):
        return len(self.values)

    def __getitem__(self, path):
        return self.values[path]


@dataclass
class RouterTwin:
    twin_id: int
    router_name: str
    model_ref: str
    last_sync: int = 0
    sensor_state: dict = field(default_factory=dict)
    _stamps: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)


class TwinGraph:
    """Registry of router twins and their relations.

    ``manifests`` maps each ``model_ref`` a twin may reference to the
    :class:`~twinguard.yang.KpiManifest` that declares its sensors.
    """

    def __init__(self, manifests: Mapping[str, KpiManifest]):
        self.manifests = dict(manifests)
        self._declared = {ref: frozenset(m.paths) for ref, m in self.manifests.items()}
        self.twins: dict[int, RouterTwin] = {}
        self._by_name: dict[str, int] = {}
        self.relations: set[tuple] = set()
        self._ids = itertools.count(1)

    def register_router(self, name: str, model_ref: str) -> int:
        if not name:
            raise ValueError("router name must be non-empty")
        if model_ref not in self.manifests:
            raise NotFound(f"no manifest registered for model_ref {model_ref!r}")
        if name in self._by_name:
            raise DuplicateTwin(name)
        twin_id = next(self._ids)
        self.twins[twin_id] = RouterTwin(twin_id, name, model_ref)
        self._by_name[name] = twin_id
        return twin_id

    def twin(self, twin_id) -> RouterTwin:
        try:
            return self.twins[twin_id]
        except KeyError:
            raise NotFound(f"unknown twin {twin_id!r}") from None

    def id_of(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise NotFound(f"unknown router {name!r}") from None

    def manifest_of(self, twin_id) -> KpiManifest:
        return self.manifests[self.twin(twin_id).model_ref]

    def ingest_reading(self, reading: SensorReading) -> None:
        twin = self.twin(reading.twin_id)
        if reading.path not in self._declared[twin.model_ref]:
            raise UnknownSensor(f"{reading.path} is not declared for {twin.router_name}")
        value = reading.value
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise InvalidValue(f"{reading.path}: non-finite value {value!r}")
        with twin._lock:
            self._apply(twin, reading.path, float(value), reading.timestamp)

    def ingest_many(self, readings: Iterable[SensorReading]) -> int:
        n = 0
        for r in readings:
            self.ingest_reading(r)
            n += 1
        return n

    def ingest_row(self, twin_id, paths, values, timestamp) -> None:
        """Apply one reading per path in a single locked update.

        Equivalent to ingesting ``SensorReading(twin_id, p, v, timestamp)``
        for each pair; used by the replay loop to avoid per-reading objects.
        """
        twin = self.twin(twin_id)
        declared = self._declared[twin.model_ref]
        checked = []
        for p, v in zip(paths, values):
            if p not in declared:
                raise UnknownSensor(f"{p} is not declared for {twin.router_name}")
            v = float(v)
            if not math.isfinite(v):
                raise InvalidValue(f"{p}: non-finite value {v!r}")
            checked.append((p, v))
        with twin._lock:
            for p, v in checked:
                self._apply(twin, p, v, timestamp)

    @staticmethod
    def _apply(twin, path, value, ts):
        prev = twin._stamps.get(path)
        if prev is not None and ts < prev:
            return
        twin.sensor_state[path] = value
        twin._stamps[path] = ts
        if ts > twin.last_sync:
            twin.last_sync = ts

    def snapshot(self, twin_id) -> SensorFrame:
        twin = self.twin(twin_id)
        manifest = self.manifests[twin.model_ref]
        with twin._lock:
            state = dict(twin.sensor_state)
            last_sync = twin.last_sync
        if len(state) != len(manifest.sensors):
            missing = [p for p in manifest.paths if p not in state]
            raise IncompleteState(twin_id, missing)
        return SensorFrame(twin_id, last_sync, MappingProxyType(state))

    def relate(self, a, b, label: str) -> None:
        self.twin(a)
        self.twin(b)
        if a == b:
            raise SelfRelation(f"twin {a} cannot relate to itself")
        self.relations.add((a, b, label))

    # ------------------------------------------------------------- export

    def export_graph(self) -> dict:
        twins = []
        for tid in sorted(self.twins):
            t = self.twins[tid]
            with t._lock:
                state = dict(t.sensor_state)
                last_sync = t.last_sync
            twins.append({
                "twin_id": tid,
                "router_name": t.router_name,
                "model_ref": t.model_ref,
                "last_sync": last_sync,
                "sensor_state": state,
            })
        relations = [{"a": a, "b": b, "label": lbl} for a, b, lbl in sorted(self.relations)]
        return {
            "twins": twins,
            "relations": relations,
            "manifest_refs": sorted({t.model_ref for t in self.twins.values()}),
        }

    def export_json(self) -> str:
        return canonical_json(self.export_graph())

    @classmethod
    def import_graph(cls, doc, manifests: Mapping[str, KpiManifest]) -> "TwinGraph":
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        graph = cls(manifests)
        top = 0
        for entry in doc["twins"]:
            tid = entry["twin_id"]
            ref = entry["model_ref"]
            if ref not in graph.manifests:
                raise NotFound(f"no manifest registered for model_ref {ref!r}")
            if entry["router_name"] in graph._by_name:
                raise DuplicateTwin(entry["router_name"])
            twin = RouterTwin(tid, entry["router_name"], ref, int(entry["last_sync"]))
            for path, value in entry["sensor_state"].items():
                if path not in graph._declared[ref]:
                    raise UnknownSensor(path)
                twin.sensor_state[path] = float(value)
                twin._stamps[path] = twin.last_sync
            graph.twins[tid] = twin
            graph._by_name[twin.router_name] = tid
            top = max(top, tid)
        graph._ids = itertools.count(top + 1)
        for rel in doc["relations"]:
            graph.relate(rel["a"], rel["b"], rel["label"])
        return graph


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


# ---------------------------------------------------------- wire format

def parse_wire_line(line: str, graph: TwinGraph) -> SensorReading:
    """Decode one NDJSON telemetry line into a :class:`SensorReading`.

    The ``twin`` field carries the router name, resolved through ``graph``.
    """
    obj = json.loads(line)
    try:
        twin, path, value, ts = obj["twin"], obj["path"], obj["value"], obj["ts"]
    except KeyError as exc:
        raise InvalidValue(f"telemetry line lacks field {exc.args[0]!r}") from None
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise InvalidValue(f"non-numeric value {value!r}")
    return SensorReading(graph.id_of(twin), path, float(value), int(ts))


def wire_line(router_name: str, path: str, value: float, ts: int) -> str:
    return json.dumps({"twin": router_name, "path": path, "value": value, "ts": ts},
                      separators=(",", ":"))


def ingest_ndjson(graph: TwinGraph, lines: Iterable[str]) -> int:
    n = 0
    for line in lines:
        if line.strip():
            graph.ingest_reading(parse_wire_line(line, graph))
            n += 1
    return n
