"""HTTP surface over the ingestion service and the analytics queries.

Every error, including framework-level ones, is rendered as the same body
shape: {"code", "message", "detail"}. Timestamps cross the wire as ISO-8601
UTC strings; GeoJSON leaves exactly as export_trips_geojson builds it.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from datetime import date, datetime

from fastapi import Body, FastAPI, Query, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from starlette.exceptions import HTTPException as StarletteHTTPException

from .analytics import (
    BadReference,
    CongestionLevel,
    EventImpactReport,
    InsufficientHistory,
    ModeShare,
    QueryTimeseries,
    congestion_snapshot,
    dataset_stats,
    event_impact_report,
    mode_share,
    stop_query_timeseries,
)
from .geo import GeoPoint
from .privacy import UnknownPseudonym, WeakKey
from .service import (
    FeedUnavailable,
    IngestService,
    InvalidEnvelope,
    NoConsent,
    RecordingAction,
    TraceUploadEnvelope,
    UnknownJob,
    export_trips_geojson,
)
from .sources import fcd_from_record, query_from_record, street_from_record
from .store import point_from_record
from .timeutil import format_instant, parse_instant
from .traces import TooFewPoints

_ERROR_STATUS = [
    (NoConsent, 403, "no-consent"),
    (InvalidEnvelope, 400, "invalid-envelope"),
    (TooFewPoints, 400, "too-few-points"),
    (UnknownPseudonym, 404, "not-found"),
    (UnknownJob, 404, "not-found"),
    (FeedUnavailable, 503, "feed-unavailable"),
    (InsufficientHistory, 422, "insufficient-history"),
    (BadReference, 422, "bad-reference"),
    (WeakKey, 500, "weak-key"),
    (ValueError, 400, "bad-request"),
]


def _error_body(code: str, message: str, detail=None) -> dict:
    return {"code": code, "message": message, "detail": detail or {}}


class _NotFound(Exception):
    pass


def _parse_point(payload: dict) -> dict:
    for key in ("t", "lat", "lon", "accuracy_m", "kind"):
        if key not in payload:
            raise InvalidEnvelope(f"point missing field {key!r}")
    record = {
        "t": payload["t"],
        "lat": payload["lat"],
        "lon": payload["lon"],
        "accuracy_m": payload["accuracy_m"],
        "kind": payload["kind"],
        "confidence": payload.get("confidence", 1.0),
    }
    if payload.get("speed_mps") is not None:
        record["speed_mps"] = payload["speed_mps"]
    return record


def _instant(text: str, name: str) -> datetime:
    try:
        return parse_instant(text)
    except ValueError as exc:
        raise ValueError(f"query parameter {name!r}: {exc}") from exc


def _mode_share_body(share: ModeShare) -> dict:
    return {
        "total_trips": share.total_trips,
        "rows": {name: asdict(row) for name, row in share.rows.items()},
    }


def _timeseries_body(series: QueryTimeseries) -> dict:
    return {
        "stop_id": series.stop_id,
        "day": series.day.isoformat(),
        "bucket_width_s": series.bucket_width_s,
        "counts": list(series.counts),
    }


def _congestion_body(level: CongestionLevel) -> dict:
    return {
        "segment_id": level.segment_id,
        "interval_start": format_instant(level.interval_start),
        "level": level.level.value,
        "speed_ratio": level.speed_ratio,
    }


def impact_body(report: EventImpactReport) -> dict:
    return {
        "venue": {"lat": report.venue.lat, "lon": report.venue.lon},
        "event_time": format_instant(report.event_time),
        "stop_id": report.stop_id,
        "congestion": [_congestion_body(c) for c in report.congestion],
        "series": _timeseries_body(report.series),
        "baseline": list(report.baseline),
        "deltas": list(report.deltas),
        "peak_bucket_start": (
            format_instant(report.peak_bucket_start)
            if report.peak_bucket_start is not None
            else None
        ),
        "peak_delta": report.peak_delta,
    }


def create_app(service: IngestService) -> FastAPI:
    app = FastAPI(title="intermodal", docs_url=None, redoc_url=None)
    store = service.store

    # -- uniform error bodies -------------------------------------------------

    def _handler(status: int, code: str):
        def handle(request: Request, exc: Exception) -> JSONResponse:
            return JSONResponse(
                status_code=status, content=_error_body(code, str(exc))
            )

        return handle

    for exc_type, status, code in _ERROR_STATUS:
        app.add_exception_handler(exc_type, _handler(status, code))
    app.add_exception_handler(_NotFound, _handler(404, "not-found"))

    @app.exception_handler(StarletteHTTPException)
    def _http_error(request: Request, exc: StarletteHTTPException) -> JSONResponse:
        code = "not-found" if exc.status_code == 404 else "http-error"
        return JSONResponse(
            status_code=exc.status_code, content=_error_body(code, str(exc.detail))
        )

    @app.exception_handler(RequestValidationError)
    def _validation_error(request: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content=_error_body("bad-request", "invalid request", exc.errors()),
        )

    # -- health ---------------------------------------------------------------

    @app.get("/health")
    def health() -> dict:
        return {
            "status": "ok",
            "feed_loaded": service.feed is not None,
            "trip_count": len(store.snapshot().keyed("trips")),
        }

    # -- write side -----------------------------------------------------------

    @app.post("/traces")
    def post_traces(payload: dict = Body(...)) -> dict:
        for key in ("client_message_id", "user_token", "recording_action"):
            if key not in payload:
                raise InvalidEnvelope(f"missing field {key!r}")
        try:
            points = [
                point_from_record(_parse_point(p))
                for p in payload.get("points", [])
            ]
        except (TypeError, KeyError, ValueError) as exc:
            raise InvalidEnvelope(f"malformed point payload: {exc}") from exc
        envelope = TraceUploadEnvelope(
            client_message_id=payload["client_message_id"],
            user_token=payload["user_token"],
            action=RecordingAction.from_wire(payload["recording_action"]),
            points=points,
        )
        return service.submit_trace_batch(envelope)

    @app.post("/consents")
    def post_consents(payload: dict = Body(...)) -> dict:
        for key in ("user_token", "policy_version"):
            if key not in payload:
                raise InvalidEnvelope(f"missing field {key!r}")
        pseudonym = service.guard.register(payload["user_token"])
        record = service.guard.grant_consent(pseudonym, payload["policy_version"])
        return {
            "pseudonym": pseudonym,
            "policy_version": record.policy_version,
            "granted_at": format_instant(record.granted_at),
            "active": record.active,
        }

    @app.post("/jobs/process")
    def process_jobs() -> dict:
        return {"results": service.process_pending()}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str) -> dict:
        job = store.get("jobs", job_id)
        if job is None:
            raise _NotFound(f"job {job_id}")
        return job

    # -- privacy --------------------------------------------------------------

    @app.delete("/users/{pseudonym}")
    def delete_user(pseudonym: str) -> dict:
        return asdict(service.guard.erase_user(pseudonym))

    @app.get("/users/{pseudonym}/export")
    def export_user(pseudonym: str) -> Response:
        dump = service.guard.export_user(pseudonym)
        return Response(content=dump, media_type="application/x-ndjson")

    @app.get("/users/{pseudonym}/stats")
    def user_stats(pseudonym: str) -> dict:
        if not service.guard.is_known(pseudonym):
            raise _NotFound(f"user {pseudonym}")
        snapshot = store.snapshot()
        pairs = [
            (segment["mode"], segment["duration_s"])
            for segment in snapshot.keyed("segments").values()
            if segment["owner"] == pseudonym and segment["mode"] is not None
        ]
        return _mode_share_body(mode_share(pairs))

    # -- read side ------------------------------------------------------------

    @app.get("/trips/{trip_id}")
    def get_trip(trip_id: str) -> dict:
        snapshot = store.snapshot()
        trip = snapshot.get("trips", trip_id)
        if trip is None:
            raise _NotFound(f"trip {trip_id}")
        segments = sorted(
            (
                s
                for s in snapshot.keyed("segments").values()
                if s["trip_id"] == trip_id
            ),
            key=lambda s: s["start_index"],
        )
        enrichments = [
            snapshot.get("enrichments", s["segment_id"])
            for s in segments
            if snapshot.get("enrichments", s["segment_id"]) is not None
        ]
        return {"trip": trip, "segments": segments, "enrichments": enrichments}

    @app.get("/stats")
    def stats() -> dict:
        return asdict(dataset_stats(store.snapshot()))

    @app.get("/stops/{stop_id}/queries")
    def stop_queries(
        stop_id: str,
        day_text: str | None = Query(None, alias="date"),
        bucket: int = 1800,
    ) -> dict:
        if service.feed is not None and stop_id not in service.feed.stops:
            raise _NotFound(f"stop {stop_id}")
        if day_text is None:
            raise ValueError("query parameter 'date' is required")
        day = date.fromisoformat(day_text)
        queries = [query_from_record(r) for r in store.records("queries")]
        return _timeseries_body(
            stop_query_timeseries(queries, stop_id, day, bucket)
        )

    @app.get("/segments/congestion")
    def segment_congestion(at: str) -> list[dict]:
        instant = _instant(at, "at")
        records = [fcd_from_record(r) for r in store.records("fcd")]
        levels = congestion_snapshot(records, instant, service.config)
        return [_congestion_body(level) for level in levels]

    @app.get("/events/impact")
    def event_impact(
        lat: float,
        lon: float,
        time: str,
        radius: float = 500.0,
        horizon: float = 7200.0,
        bucket: int = 1800,
    ) -> dict:
        if service.feed is None:
            raise FeedUnavailable("event impact needs a loaded timetable")
        report = event_impact_report(
            venue=GeoPoint(lat, lon),
            event_time=_instant(time, "time"),
            radius_m=radius,
            horizon_s=horizon,
            fcd_records=[fcd_from_record(r) for r in store.records("fcd")],
            queries=[query_from_record(r) for r in store.records("queries")],
            streets=[street_from_record(r) for r in store.records("streets")],
            feed=service.feed,
            config=service.config,
            bucket_width_s=bucket,
        )
        return impact_body(report)

    @app.get("/export/trips.geojson")
    def export_geojson(
        pseudonym: str | None = None,
        mode: str | None = None,
        date_from: str | None = None,
        date_to: str | None = None,
    ) -> Response:
        doc = export_trips_geojson(
            store.snapshot(),
            pseudonym=pseudonym,
            date_from=_instant(date_from, "date_from") if date_from else None,
            date_to=_instant(date_to, "date_to") if date_to else None,
            mode=mode,
        )
        return Response(
            content=json.dumps(doc), media_type="application/geo+json"
        )

    return app
