"""Ingestion service: envelopes, idempotent replay, jobs, GeoJSON export."""

from datetime import datetime, timedelta, timezone

import pytest

from intermodal.config import PipelineConfig
from intermodal.gtfs import load_gtfs
from intermodal.privacy import PrivacyGuard
from intermodal.service import (
    FeedUnavailable,
    IngestService,
    InvalidEnvelope,
    JobStage,
    NoConsent,
    RecordingAction,
    TraceUploadEnvelope,
    UnknownJob,
    deterministic_trip_id,
    export_trips_geojson,
)
from intermodal.store import Store
from intermodal.traces import ActivityKind, TooFewPoints

from helpers import (
    BASE_TS,
    MINIMAL_FEED,
    pt,
    ride_points,
    straight_walk,
    write_feed_files,
)

KEY = b"service-test-key-0123456789abcdef"
TOKEN = "rider-42@example.org"
NOW = datetime(2025, 3, 3, 9, 0, 0, tzinfo=timezone.utc)


def build_service(tmp_path, feed=None, consent=True, token=TOKEN):
    store = Store(tmp_path / "store")
    guard = PrivacyGuard(store, KEY)
    service = IngestService(store, guard, PipelineConfig(), feed=feed)
    pseudonym = guard.register(token, now=NOW)
    if consent:
        guard.grant_consent(pseudonym, "policy-1", now=NOW)
    return service, pseudonym


def envelope(mid, action, points=(), token=TOKEN):
    return TraceUploadEnvelope(
        client_message_id=mid,
        user_token=token,
        action=action,
        points=list(points),
    )


def upload_trip(service, points, prefix="m"):
    """Start(points) + Stop; returns the Stop response."""
    service.submit_trace_batch(
        envelope(f"{prefix}-start", RecordingAction.START, points), now=NOW
    )
    return service.submit_trace_batch(
        envelope(f"{prefix}-stop", RecordingAction.STOP), now=NOW
    )


# ---------------------------------------------------------------------------
# upload envelopes


def test_start_append_stop_makes_one_trip_and_queues_a_job(tmp_path):
    service, pseudonym = build_service(tmp_path)
    walk = straight_walk(ActivityKind.ON_FOOT, 1.4, 3, step_s=30)

    r1 = service.submit_trace_batch(envelope("m1", RecordingAction.START), now=NOW)
    assert r1 == {"trip_id": None, "points_accepted": 0, "points_dropped": 0}

    r2 = service.submit_trace_batch(
        envelope("m2", RecordingAction.APPEND, walk), now=NOW
    )
    assert r2 == {"trip_id": None, "points_accepted": 3, "points_dropped": 0}

    r3 = service.submit_trace_batch(envelope("m3", RecordingAction.STOP), now=NOW)
    assert r3["trip_id"] is not None
    assert r3["points_accepted"] == 3
    assert r3["points_dropped"] == 0

    trips = service.store.items("trips")
    assert len(trips) == 1
    trip_id, record = trips[0]
    assert record["owner"] == pseudonym
    assert len(record["points"]) == 3

    jobs = service.store.items("jobs")
    assert len(jobs) == 1
    assert jobs[0][1]["trip_id"] == trip_id
    assert jobs[0][1]["stage"] == "Received"


def test_replayed_envelope_returns_original_result_and_stores_one_copy(tmp_path):
    service, _ = build_service(tmp_path)
    walk = straight_walk(ActivityKind.ON_FOOT, 1.4, 5, step_s=30)

    service.submit_trace_batch(envelope("m1", RecordingAction.START, walk), now=NOW)
    first = service.submit_trace_batch(envelope("m2", RecordingAction.STOP), now=NOW)
    baseline = service.store.fingerprint()

    for _ in range(3):
        again = service.submit_trace_batch(
            envelope("m2", RecordingAction.STOP), now=NOW
        )
        assert again == first
    assert service.store.fingerprint() == baseline
    assert len(service.store.items("trips")) == 1


def test_replaying_every_envelope_leaves_store_byte_identical(tmp_path):
    service, _ = build_service(tmp_path)
    walk = straight_walk(ActivityKind.ON_FOOT, 1.4, 4, step_s=20)
    sent = [
        envelope("m1", RecordingAction.START),
        envelope("m2", RecordingAction.APPEND, walk[:2]),
        envelope("m3", RecordingAction.APPEND, walk[2:]),
        envelope("m4", RecordingAction.STOP),
    ]
    for e in sent:
        service.submit_trace_batch(e, now=NOW)
    baseline = service.store.fingerprint()

    for e in sent:
        service.submit_trace_batch(e, now=NOW)
    assert service.store.fingerprint() == baseline


def test_stop_with_one_usable_point_reports_too_few_and_stores_nothing(tmp_path):
    service, _ = build_service(tmp_path)
    points = [
        pt(0, 52.37, 9.73),
        pt(10, 52.37, 9.73, accuracy=500.0),  # over the accuracy cutoff
    ]
    service.submit_trace_batch(
        envelope("m1", RecordingAction.START, points), now=NOW
    )
    with pytest.raises(TooFewPoints):
        service.submit_trace_batch(envelope("m2", RecordingAction.STOP), now=NOW)

    assert service.store.items("trips") == []
    assert service.store.items("jobs") == []

    # the failure outcome itself replays
    baseline = service.store.fingerprint()
    with pytest.raises(TooFewPoints):
        service.submit_trace_batch(envelope("m2", RecordingAction.STOP), now=NOW)
    assert service.store.fingerprint() == baseline


def test_upload_without_consent_is_rejected(tmp_path):
    service, _ = build_service(tmp_path, consent=False)
    with pytest.raises(NoConsent):
        service.submit_trace_batch(envelope("m1", RecordingAction.START), now=NOW)
    assert service.store.items("recordings") == []
    assert service.store.items("idempotency") == []


def test_envelope_validation():
    with pytest.raises(InvalidEnvelope):
        envelope("", RecordingAction.START).validate()
    with pytest.raises(InvalidEnvelope):
        envelope("m1", RecordingAction.START, token="").validate()
    out_of_order = [pt(10, 52.37, 9.73), pt(0, 52.37, 9.73)]
    with pytest.raises(InvalidEnvelope):
        envelope("m1", RecordingAction.APPEND, out_of_order).validate()
    with pytest.raises(InvalidEnvelope):
        RecordingAction.from_wire("Pause")
    assert RecordingAction.from_wire("Start") is RecordingAction.START


def test_append_or_stop_without_open_recording_is_invalid(tmp_path):
    service, _ = build_service(tmp_path)
    with pytest.raises(InvalidEnvelope):
        service.submit_trace_batch(envelope("m1", RecordingAction.APPEND), now=NOW)
    with pytest.raises(InvalidEnvelope):
        service.submit_trace_batch(envelope("m2", RecordingAction.STOP), now=NOW)


def test_start_replaces_any_open_recording(tmp_path):
    service, _ = build_service(tmp_path)
    stale = straight_walk(ActivityKind.ON_FOOT, 1.4, 5, step_s=10)
    fresh = straight_walk(
        ActivityKind.ON_BICYCLE, 4.0, 3, step_s=10, start_offset_s=600
    )
    service.submit_trace_batch(envelope("m1", RecordingAction.START, stale), now=NOW)
    service.submit_trace_batch(envelope("m2", RecordingAction.START, fresh), now=NOW)
    response = service.submit_trace_batch(
        envelope("m3", RecordingAction.STOP), now=NOW
    )
    assert response["points_accepted"] == 3


def test_trip_id_is_deterministic_per_message():
    a = deterministic_trip_id("abc", "m9")
    assert a == deterministic_trip_id("abc", "m9")
    assert a != deterministic_trip_id("abc", "m8")
    assert a != deterministic_trip_id("abd", "m9")
    assert a.startswith("trip-") and len(a) == len("trip-") + 16


# ---------------------------------------------------------------------------
# processing jobs


def make_feed(tmp_path):
    return load_gtfs(str(write_feed_files(tmp_path / "feed")))


def only_job_id(service):
    jobs = service.store.items("jobs")
    assert len(jobs) == 1
    return jobs[0][0]


def test_bicycle_trip_reaches_enriched_without_enrichment(tmp_path):
    service, _ = build_service(tmp_path, feed=make_feed(tmp_path))
    ride = straight_walk(ActivityKind.ON_BICYCLE, 4.0, 30, step_s=10, lat0=52.5)
    upload_trip(service, ride)

    job = service.run_processing_job(only_job_id(service), now=NOW)
    assert job["stage"] == "Enriched"

    segments = [record for _, record in service.store.items("segments")]
    assert len(segments) == 1
    assert segments[0]["mode"] == "Bicycle"
    assert segments[0]["confidence"] == 1.0
    assert service.store.items("enrichments") == []


def test_tram_ride_is_enriched_with_stops_and_line(tmp_path):
    feed = make_feed(tmp_path)
    service, _ = build_service(tmp_path, feed=feed)
    ride = ride_points(feed, "T1", 0, 2, n=12)
    upload_trip(service, ride)

    job = service.run_processing_job(only_job_id(service), now=NOW)
    assert job["stage"] == "Enriched"

    segments = [record for _, record in service.store.items("segments")]
    assert len(segments) == 1
    assert segments[0]["mode"] == "Tram"

    enrichments = [record for _, record in service.store.items("enrichments")]
    assert len(enrichments) == 1
    e = enrichments[0]
    assert e["segment_id"] == segments[0]["segment_id"]
    assert e["entry_stop_id"] == "S1"
    assert e["exit_stop_id"] == "S3"
    assert e["route_id"] == "R1"
    assert e["timetable_trip_id"] == "T1"
    assert e["schedule_deviation_s"] == pytest.approx(0.0, abs=1e-6)


def test_missing_feed_parks_job_then_retry_completes(tmp_path):
    service, _ = build_service(tmp_path, feed=None)
    walk = straight_walk(ActivityKind.ON_FOOT, 1.4, 20, step_s=10)
    upload_trip(service, walk)
    job_id = only_job_id(service)

    t1 = NOW + timedelta(minutes=1)
    with pytest.raises(FeedUnavailable):
        service.run_processing_job(job_id, now=t1)

    parked = service.store.get("jobs", job_id)
    assert parked["stage"] == "Segmented"
    segments = [record for _, record in service.store.items("segments")]
    assert len(segments) == 1
    assert segments[0]["mode"] is None

    service.feed = make_feed(tmp_path)
    t2 = NOW + timedelta(minutes=5)
    done = service.run_processing_job(job_id, now=t2)
    assert done["stage"] == "Enriched"
    # the original Segmented timestamp survives the retry
    assert done["stages"]["Segmented"] == "2025-03-03T09:01:00Z"
    stamps = [done["stages"][s.value] for s in
              (JobStage.RECEIVED, JobStage.SEGMENTED, JobStage.CLASSIFIED,
               JobStage.ENRICHED)]
    assert stamps == sorted(stamps)


def test_terminal_job_is_returned_unchanged(tmp_path):
    service, _ = build_service(tmp_path, feed=make_feed(tmp_path))
    upload_trip(service, straight_walk(ActivityKind.ON_FOOT, 1.4, 15, step_s=10))
    job_id = only_job_id(service)
    done = service.run_processing_job(job_id, now=NOW)
    baseline = service.store.fingerprint()
    assert service.run_processing_job(job_id, now=NOW + timedelta(hours=1)) == done
    assert service.store.fingerprint() == baseline


def test_unknown_job_raises(tmp_path):
    service, _ = build_service(tmp_path)
    with pytest.raises(UnknownJob):
        service.run_processing_job("no-such-job")


class _ExplodingIndex:
    def nearest_within(self, *args, **kwargs):
        raise RuntimeError("index corrupted")


class _ExplodingFeed:
    stop_index = _ExplodingIndex()


def test_classifier_crash_marks_job_failed_and_keeps_raw_trip(tmp_path):
    service, _ = build_service(tmp_path, feed=_ExplodingFeed())
    ride = straight_walk(ActivityKind.IN_VEHICLE, 10.0, 20, step_s=10)
    response = upload_trip(service, ride)
    job_id = only_job_id(service)

    job = service.run_processing_job(job_id, now=NOW)
    assert job["stage"] == "Failed"
    assert "RuntimeError" in job["error"]
    assert service.store.get("trips", response["trip_id"]) is not None

    # Failed is terminal: nothing changes on rerun
    assert service.run_processing_job(job_id, now=NOW)["stage"] == "Failed"


def test_process_pending_runs_every_open_job(tmp_path):
    service, _ = build_service(tmp_path, feed=None)
    upload_trip(service, straight_walk(ActivityKind.ON_FOOT, 1.4, 15, step_s=10),
                prefix="a")
    upload_trip(service,
                straight_walk(ActivityKind.ON_BICYCLE, 4.0, 15, step_s=10,
                              start_offset_s=3600),
                prefix="b")

    parked = service.process_pending(now=NOW)
    assert sorted(parked.values()) == ["Segmented", "Segmented"]

    service.feed = make_feed(tmp_path)
    finished = service.process_pending(now=NOW)
    assert sorted(finished.values()) == ["Enriched", "Enriched"]
    assert service.pending_jobs() == []


def test_raw_token_never_reaches_disk(tmp_path):
    feed = make_feed(tmp_path)
    service, _ = build_service(tmp_path, feed=feed)
    upload_trip(service, ride_points(feed, "T1", 0, 2, n=12))
    service.process_pending(now=NOW)

    for path in (tmp_path / "store").glob("*.json"):
        blob = path.read_bytes()
        assert b"rider-42" not in blob
        assert TOKEN.encode() not in blob


# ---------------------------------------------------------------------------
# GeoJSON export


def test_export_on_empty_store_is_an_empty_collection(tmp_path):
    store = Store(tmp_path / "store")
    assert export_trips_geojson(store.snapshot()) == {
        "type": "FeatureCollection",
        "features": [],
    }


def test_export_emits_lon_lat_and_segment_properties(tmp_path):
    service, _ = build_service(tmp_path, feed=make_feed(tmp_path))
    ride = straight_walk(ActivityKind.ON_BICYCLE, 4.0, 30, step_s=10,
                         lat0=52.37, lon0=9.73)
    upload_trip(service, ride)
    service.process_pending(now=NOW)

    doc = export_trips_geojson(service.store.snapshot())
    assert doc["type"] == "FeatureCollection"
    assert len(doc["features"]) == 1
    feature = doc["features"][0]
    assert feature["geometry"]["type"] == "LineString"
    assert feature["geometry"]["coordinates"][0] == [9.73, 52.37]
    assert len(feature["geometry"]["coordinates"]) == 30

    properties = feature["properties"]
    assert properties["mode"] == "Bicycle"
    assert properties["duration_s"] == pytest.approx(290.0)
    assert properties["length_m"] == pytest.approx(4.0 * 290.0, rel=1e-6)
    assert "entry_stop" not in properties


def test_export_adds_transit_properties(tmp_path):
    feed = make_feed(tmp_path)
    service, _ = build_service(tmp_path, feed=feed)
    upload_trip(service, ride_points(feed, "T1", 0, 2, n=12))
    service.process_pending(now=NOW)

    doc = export_trips_geojson(service.store.snapshot())
    properties = doc["features"][0]["properties"]
    assert properties["mode"] == "Tram"
    assert properties["entry_stop"] == "S1"
    assert properties["exit_stop"] == "S3"
    assert properties["route"] == "R1"


def test_export_filters_by_owner_mode_and_date(tmp_path):
    feed = make_feed(tmp_path)
    store = Store(tmp_path / "store")
    guard = PrivacyGuard(store, KEY)
    service = IngestService(store, guard, PipelineConfig(), feed=feed)

    users = {}
    for token in ("alice@example.org", "bob@example.org"):
        pseudonym = guard.register(token, now=NOW)
        guard.grant_consent(pseudonym, "policy-1", now=NOW)
        users[token] = pseudonym

    service.submit_trace_batch(
        envelope("m1", RecordingAction.START,
                 straight_walk(ActivityKind.ON_BICYCLE, 4.0, 15, step_s=10,
                               lat0=52.5),
                 token="alice@example.org"),
        now=NOW,
    )
    service.submit_trace_batch(
        envelope("m2", RecordingAction.STOP, token="alice@example.org"), now=NOW
    )
    service.submit_trace_batch(
        envelope("m3", RecordingAction.START, ride_points(feed, "T1", 0, 2, n=12),
                 token="bob@example.org"),
        now=NOW,
    )
    service.submit_trace_batch(
        envelope("m4", RecordingAction.STOP, token="bob@example.org"), now=NOW
    )
    service.process_pending(now=NOW)
    snapshot = store.snapshot()

    assert len(export_trips_geojson(snapshot)["features"]) == 2

    alice_only = export_trips_geojson(snapshot, pseudonym=users["alice@example.org"])
    assert [f["properties"]["mode"] for f in alice_only["features"]] == ["Bicycle"]

    trams = export_trips_geojson(snapshot, mode="Tram")
    assert [f["properties"]["mode"] for f in trams["features"]] == ["Tram"]

    none_before = export_trips_geojson(
        snapshot, date_to=BASE_TS - timedelta(days=1)
    )
    assert none_before["features"] == []
    all_day = export_trips_geojson(
        snapshot,
        date_from=BASE_TS - timedelta(hours=9),
        date_to=BASE_TS + timedelta(hours=15),
    )
    assert len(all_day["features"]) == 2


def test_export_skips_unclassified_segments(tmp_path):
    service, _ = build_service(tmp_path, feed=None)
    upload_trip(service, straight_walk(ActivityKind.ON_FOOT, 1.4, 15, step_s=10))
    with pytest.raises(FeedUnavailable):
        service.run_processing_job(only_job_id(service), now=NOW)

    assert export_trips_geojson(service.store.snapshot())["features"] == []
