import json
import math
import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

from twinguard.errors import (DuplicateTwin, IncompleteState, InvalidValue, NotFound, SelfRelation,
                              UnknownSensor)
from twinguard.twin_graph import (SensorReading, TwinGraph, canonical_json, ingest_ndjson,
                                  parse_wire_line, wire_line)


@pytest.fixture
def graph(manifest):
    return TwinGraph({"kpi-bundle-v1": manifest})


def fill(graph, tid, manifest, ts=1, value=1.0):
    for p in manifest.paths:
        graph.ingest_reading(SensorReading(tid, p, value, ts))


def test_first_registration_gets_id_1(graph):
    assert graph.register_router("core-rtr-1", "kpi-bundle-v1") == 1


def test_duplicate_name_rejected(graph):
    graph.register_router("core-rtr-1", "kpi-bundle-v1")
    with pytest.raises(DuplicateTwin):
        graph.register_router("core-rtr-1", "kpi-bundle-v1")


def test_thousand_registrations_distinct(graph):
    ids = {graph.register_router(f"r{i}", "kpi-bundle-v1") for i in range(1000)}
    assert len(ids) == 1000


def test_register_requires_name_and_known_model(graph):
    with pytest.raises(ValueError):
        graph.register_router("", "kpi-bundle-v1")
    with pytest.raises(NotFound):
        graph.register_router("r", "no-such-bundle")


def test_new_twin_has_empty_state(graph):
    tid = graph.register_router("r", "kpi-bundle-v1")
    assert graph.twin(tid).sensor_state == {}


def test_ingest_updates_state_and_sync(graph, manifest):
    tid = graph.register_router("r", "kpi-bundle-v1")
    p = manifest.paths[0]
    graph.ingest_reading(SensorReading(tid, p, 5.0, 42))
    twin = graph.twin(tid)
    assert twin.sensor_state[p] == 5.0 and twin.last_sync == 42


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_rejected(graph, manifest, bad):
    tid = graph.register_router("r", "kpi-bundle-v1")
    with pytest.raises(InvalidValue):
        graph.ingest_reading(SensorReading(tid, manifest.paths[0], bad, 1))
    assert graph.twin(tid).sensor_state == {}


def test_unknown_twin_and_path(graph, manifest):
    tid = graph.register_router("r", "kpi-bundle-v1")
    with pytest.raises(NotFound):
        graph.ingest_reading(SensorReading(99, manifest.paths[0], 1.0, 1))
    with pytest.raises(UnknownSensor):
        graph.ingest_reading(SensorReading(tid, "/kpi1/iface/nope", 1.0, 1))


@pytest.mark.parametrize("order", [(0, 1), (1, 0)])
def test_last_write_by_timestamp_wins(graph, manifest, order):
    tid = graph.register_router("r", "kpi-bundle-v1")
    p = manifest.paths[3]
    readings = [SensorReading(tid, p, 10.0, 5), SensorReading(tid, p, 20.0, 9)]
    for i in order:
        graph.ingest_reading(readings[i])
    assert graph.twin(tid).sensor_state[p] == 20.0
    assert graph.twin(tid).last_sync == 9


def test_equal_timestamps_later_arrival_wins(graph, manifest):
    tid = graph.register_router("r", "kpi-bundle-v1")
    p = manifest.paths[0]
    graph.ingest_reading(SensorReading(tid, p, 1.0, 5))
    graph.ingest_reading(SensorReading(tid, p, 2.0, 5))
    assert graph.twin(tid).sensor_state[p] == 2.0


def test_full_snapshot_has_92_entries(graph, manifest):
    tid = graph.register_router("r", "kpi-bundle-v1")
    fill(graph, tid, manifest)
    frame = graph.snapshot(tid)
    assert len(frame) == 92 and set(frame.values) == set(manifest.paths)


def test_incomplete_snapshot_lists_missing(graph, manifest):
    tid = graph.register_router("r", "kpi-bundle-v1")
    for p in manifest.paths[1:]:
        graph.ingest_reading(SensorReading(tid, p, 1.0, 1))
    with pytest.raises(IncompleteState) as exc:
        graph.snapshot(tid)
    assert exc.value.missing == [manifest.paths[0]]


def test_snapshot_decoupled_from_later_ingest(graph, manifest):
    tid = graph.register_router("r", "kpi-bundle-v1")
    fill(graph, tid, manifest)
    frame = graph.snapshot(tid)
    graph.ingest_reading(SensorReading(tid, manifest.paths[0], 99.0, 2))
    assert frame[manifest.paths[0]] == 1.0 and frame.last_sync == 1
    with pytest.raises(TypeError):
        frame.values[manifest.paths[0]] = 3.0


def test_snapshot_unknown_twin(graph):
    with pytest.raises(NotFound):
        graph.snapshot(7)


def test_relate_idempotent_and_no_self(graph):
    a = graph.register_router("a", "kpi-bundle-v1")
    b = graph.register_router("b", "kpi-bundle-v1")
    graph.relate(a, b, "peer")
    graph.relate(a, b, "peer")
    assert len(graph.relations) == 1
    with pytest.raises(SelfRelation):
        graph.relate(a, a, "peer")
    with pytest.raises(NotFound):
        graph.relate(a, 42, "peer")


def test_ring_export_lists_all_relations(graph):
    n = 7
    ids = [graph.register_router(f"r{i}", "kpi-bundle-v1") for i in range(n)]
    for i in range(n):
        graph.relate(ids[i], ids[(i + 1) % n], "peer")
    doc = graph.export_graph()
    assert len(doc["relations"]) == n and len(doc["twins"]) == n


def test_empty_export(graph):
    doc = graph.export_graph()
    assert doc == {"twins": [], "relations": [], "manifest_refs": []}


def test_export_sizes(graph):
    ids = [graph.register_router(f"r{i}", "kpi-bundle-v1") for i in range(3)]
    graph.relate(ids[0], ids[1], "peer")
    graph.relate(ids[1], ids[2], "uplink")
    doc = graph.export_graph()
    assert (len(doc["twins"]), len(doc["relations"])) == (3, 2)


def test_round_trip_byte_identical(graph, manifest):
    ids = [graph.register_router(f"r{i}", "kpi-bundle-v1") for i in range(3)]
    fill(graph, ids[0], manifest, ts=4, value=0.1)
    graph.ingest_reading(SensorReading(ids[1], manifest.paths[5], 1e-300, 8))
    graph.relate(ids[0], ids[2], "peer")
    text = graph.export_json()
    again = TwinGraph.import_graph(text, {"kpi-bundle-v1": manifest})
    assert again.export_json() == text
    # fresh ids continue after imported ones
    assert again.register_router("new", "kpi-bundle-v1") == 4


def test_wire_format(graph, manifest):
    tid = graph.register_router("core-rtr-1", "kpi-bundle-v1")
    line = '{"twin":"core-rtr-1","path":"/kpi1/iface/in-octets","value":123.4,"ts":9001}'
    r = parse_wire_line(line, graph)
    assert r == SensorReading(tid, "/kpi1/iface/in-octets", 123.4, 9001)
    assert json.loads(wire_line("core-rtr-1", r.path, r.value, r.timestamp)) == json.loads(line)
    assert ingest_ndjson(graph, [line, "", line]) == 2
    with pytest.raises(InvalidValue):
        parse_wire_line('{"twin":"core-rtr-1","path":"/kpi1/iface/in-octets","ts":1}', graph)


def test_concurrent_snapshots_are_consistent(graph, manifest):
    """Readers never see a frame mixing two row updates."""
    tid = graph.register_router("r", "kpi-bundle-v1")
    paths = manifest.paths
    graph.ingest_row(tid, paths, [0.0] * len(paths), 0)
    bad = []

    def writer():
        for t in range(1, 300):
            graph.ingest_row(tid, paths, [float(t)] * len(paths), t)

    def reader():
        for _ in range(300):
            vals = set(graph.snapshot(tid).values.values())
            if len(vals) != 1:
                bad.append(vals)

    threads = [threading.Thread(target=writer)] + [threading.Thread(target=reader) for _ in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not bad


readings = st.lists(st.tuples(st.integers(0, 4), st.integers(0, 20),
                              st.floats(-1e6, 1e6, allow_nan=False)), max_size=60)


@given(readings)
def test_state_equals_max_timestamp_reading(manifest, seq):
    """Per path, state holds the latest-arriving reading among those with the greatest timestamp."""
    graph = TwinGraph({"m": manifest})
    tid = graph.register_router("r", "m")
    expect, last_sync = {}, 0
    for k, ts, v in seq:
        p = manifest.paths[k]
        graph.ingest_reading(SensorReading(tid, p, v, ts))
        if p not in expect or ts >= expect[p][0]:
            expect[p] = (ts, v)
        assert graph.twin(tid).last_sync >= last_sync
        last_sync = graph.twin(tid).last_sync
    assert graph.twin(tid).sensor_state == {p: v for p, (_, v) in expect.items()}


@given(st.lists(st.tuples(st.text(min_size=1, max_size=6), st.integers(0, 5)), max_size=8, unique_by=lambda t: t[0]),
       st.data())
def test_export_import_identity(manifest, twins, data):
    graph = TwinGraph({"m": manifest})
    ids = []
    for name, n in twins:
        tid = graph.register_router(name, "m")
        ids.append(tid)
        for k in range(n):
            graph.ingest_reading(SensorReading(tid, manifest.paths[k], float(k) / 3, k))
    if len(ids) >= 2:
        for _ in range(data.draw(st.integers(0, 4))):
            a, b = data.draw(st.sampled_from(ids)), data.draw(st.sampled_from(ids))
            if a != b:
                graph.relate(a, b, data.draw(st.sampled_from(["peer", "uplink"])))
    text = graph.export_json()
    assert TwinGraph.import_graph(text, {"m": manifest}).export_json() == text
    assert canonical_json(json.loads(text)) == text
