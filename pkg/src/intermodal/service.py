"""Server-side ingestion and processing.

Phones stream recordings as Start/Append/Stop envelopes over an
at-least-once channel, so every envelope carries a client message id and the
service keeps a receipt per (pseudonym, message id): replays return the
recorded outcome and write nothing. A Stop closes the recording, assembles
the trip and enqueues a processing job that segments, classifies and
enriches it. Raw user tokens are swapped for pseudonyms before anything is
written.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .config import PipelineConfig
from .gtfs import GtfsFeed
from .modes import classify_segment
from .privacy import PrivacyGuard
from .store import (
    Store,
    StoreSnapshot,
    point_from_record,
    point_to_record,
    trip_from_record,
    trip_to_record,
)
from .timeutil import format_instant, parse_instant
from .traces import (
    Segment,
    TooFewPoints,
    TracePoint,
    Trip,
    assemble_trip,
    segment_by_activity,
)


class InvalidEnvelope(Exception):
    pass


class NoConsent(Exception):
    pass


class FeedUnavailable(Exception):
    """No timetable loaded; enrichment cannot run yet."""


class UnknownJob(Exception):
    pass


class RecordingAction(enum.Enum):
    START = "Start"
    APPEND = "Append"
    STOP = "Stop"

    @classmethod
    def from_wire(cls, value: str) -> "RecordingAction":
        for action in cls:
            if action.value == value:
                return action
        raise InvalidEnvelope(f"unknown recording action: {value!r}")


class JobStage(enum.Enum):
    RECEIVED = "Received"
    SEGMENTED = "Segmented"
    CLASSIFIED = "Classified"
    ENRICHED = "Enriched"
    FAILED = "Failed"


_STAGE_ORDER = [
    JobStage.RECEIVED,
    JobStage.SEGMENTED,
    JobStage.CLASSIFIED,
    JobStage.ENRICHED,
]


@dataclass
class TraceUploadEnvelope:
    client_message_id: str
    user_token: str
    action: RecordingAction
    points: list[TracePoint] = field(default_factory=list)

    def validate(self):
        if not self.client_message_id:
            raise InvalidEnvelope("missing client_message_id")
        if not self.user_token:
            raise InvalidEnvelope("missing user_token")
        for prev, cur in zip(self.points, self.points[1:]):
            if cur.timestamp < prev.timestamp:
                raise InvalidEnvelope("points out of order within envelope")


def deterministic_trip_id(pseudonym: str, client_message_id: str) -> str:
    digest = hashlib.sha256(f"{pseudonym}:{client_message_id}".encode()).hexdigest()
    return f"trip-{digest[:16]}"


class IngestService:
    """Database input + data processing behind one store."""

    def __init__(
        self,
        store: Store,
        guard: PrivacyGuard,
        config: PipelineConfig | None = None,
        feed: GtfsFeed | None = None,
    ):
        self.store = store
        self.guard = guard
        self.config = config or PipelineConfig()
        self.feed = feed

    # -- upload -------------------------------------------------------------

    def submit_trace_batch(
        self, envelope: TraceUploadEnvelope, now: datetime | None = None
    ) -> dict:
        """Returns {trip_id, points_accepted, points_dropped}. trip_id is
        null until the Stop envelope closes the recording."""
        envelope.validate()
        now = now or datetime.now(timezone.utc)
        pseudonym = self.guard.register(envelope.user_token, now=now)

        idem_key = f"{pseudonym}:{envelope.client_message_id}"
        recorded = self.store.get("idempotency", idem_key)
        if recorded is not None:
            return self._replay(recorded)

        if not self.guard.has_active_consent(pseudonym):
            raise NoConsent(pseudonym)

        outcome = self._apply(envelope, pseudonym, now)
        self.store.put("idempotency", idem_key, outcome)
        return self._replay(outcome)

    def _replay(self, outcome: dict) -> dict:
        if "error" in outcome:
            raise TooFewPoints(outcome["error"])
        return dict(outcome["response"])

    def _apply(self, envelope: TraceUploadEnvelope, pseudonym: str, now: datetime) -> dict:
        buffered = self.store.get("recordings", pseudonym)
        incoming = [point_to_record(p) for p in envelope.points]

        if envelope.action is RecordingAction.START:
            self.store.put(
                "recordings",
                pseudonym,
                {"owner": pseudonym, "points": incoming, "opened_at": format_instant(now)},
            )
            return {"response": {"trip_id": None,
                                 "points_accepted": len(incoming),
                                 "points_dropped": 0}}

        if buffered is None:
            raise InvalidEnvelope(f"no open recording for {envelope.action.value}")

        all_points = buffered["points"] + incoming
        if envelope.action is RecordingAction.APPEND:
            buffered["points"] = all_points
            self.store.put("recordings", pseudonym, buffered)
            return {"response": {"trip_id": None,
                                 "points_accepted": len(incoming),
                                 "points_dropped": 0}}

        # Stop: the recording is over either way
        self.store.delete("recordings", pseudonym)
        trip_id = deterministic_trip_id(pseudonym, envelope.client_message_id)
        try:
            trip, dropped = assemble_trip(
                pseudonym,
                [point_from_record(p) for p in all_points],
                self.config,
                trip_id=trip_id,
            )
        except TooFewPoints as exc:
            return {"error": str(exc)}

        self.store.put("trips", trip_id, trip_to_record(trip))
        job_id = f"job-{trip_id}"
        self.store.put(
            "jobs",
            job_id,
            {
                "job_id": job_id,
                "trip_id": trip_id,
                "stage": JobStage.RECEIVED.value,
                "stages": {JobStage.RECEIVED.value: format_instant(now)},
            },
        )
        return {"response": {"trip_id": trip_id,
                             "points_accepted": len(trip.points),
                             "points_dropped": dropped}}

    # -- processing ---------------------------------------------------------

    def _advance(self, job: dict, stage: JobStage, now: datetime):
        current = JobStage(job["stage"])
        if current is JobStage.FAILED:
            raise ValueError("Failed is terminal")
        if stage is not JobStage.FAILED:
            if _STAGE_ORDER.index(stage) <= _STAGE_ORDER.index(current):
                return  # already there; keep the original timestamp
        job["stage"] = stage.value
        job["stages"].setdefault(stage.value, format_instant(now))
        self.store.put("jobs", job["job_id"], job)

    def run_processing_job(self, job_id: str, now: datetime | None = None) -> dict:
        """Advance one trip through segmentation, classification and
        enrichment. Missing timetable parks the job at Segmented and raises
        FeedUnavailable; rerunning after the feed is loaded completes it.
        Any other failure marks the job Failed and keeps the raw trip."""
        now = now or datetime.now(timezone.utc)
        job = self.store.get("jobs", job_id)
        if job is None:
            raise UnknownJob(job_id)
        if job["stage"] in (JobStage.ENRICHED.value, JobStage.FAILED.value):
            return job

        trip_record = self.store.get("trips", job["trip_id"])
        if trip_record is None:
            job["error"] = "trip vanished from store"
            self._advance(job, JobStage.FAILED, now)
            return job
        trip = trip_from_record(trip_record)

        segments = segment_by_activity(trip, self.config)
        segment_rows = []
        for index, segment in enumerate(segments):
            segment_rows.append(self._segment_record(trip, index, segment))
        for row in segment_rows:
            self.store.put("segments", row["segment_id"], row)
        self._advance(job, JobStage.SEGMENTED, now)

        if self.feed is None:
            raise FeedUnavailable(job_id)

        try:
            enrichments = []
            for row, segment in zip(segment_rows, segments):
                label, enrichment = classify_segment(segment, self.feed, self.config)
                row["mode"] = label.mode.value
                row["confidence"] = label.confidence
                if enrichment is not None:
                    enrichments.append(
                        {
                            "segment_id": row["segment_id"],
                            "entry_stop_id": enrichment.entry_stop_id,
                            "exit_stop_id": enrichment.exit_stop_id,
                            "route_id": enrichment.route_id,
                            "timetable_trip_id": enrichment.trip_id,
                            "schedule_deviation_s": enrichment.schedule_deviation_s,
                        }
                    )
        except Exception as exc:  # classification must never wedge a job
            job["error"] = f"{type(exc).__name__}: {exc}"
            self._advance(job, JobStage.FAILED, now)
            return job

        for row in segment_rows:
            self.store.put("segments", row["segment_id"], row)
        self._advance(job, JobStage.CLASSIFIED, now)
        for record in enrichments:
            self.store.put("enrichments", record["segment_id"], record)
        self._advance(job, JobStage.ENRICHED, now)
        return self.store.get("jobs", job_id)

    def _segment_record(self, trip: Trip, index: int, segment: Segment) -> dict:
        return {
            "segment_id": f"{trip.trip_id}:{index}",
            "trip_id": trip.trip_id,
            "owner": trip.owner,
            "start_index": segment.start_index,
            "point_count": len(segment.points),
            "kind": segment.dominant_kind.value,
            "mode": None,
            "confidence": None,
            "started_at": format_instant(segment.started_at),
            "ended_at": format_instant(segment.ended_at),
            "duration_s": segment.duration_s,
            "length_m": segment.length_m,
        }

    def pending_jobs(self) -> list[str]:
        return sorted(
            job_id
            for job_id, job in self.store.items("jobs")
            if job["stage"] not in (JobStage.ENRICHED.value, JobStage.FAILED.value)
        )

    def process_pending(self, now: datetime | None = None) -> dict[str, str]:
        """Run every non-terminal job; returns job_id -> final stage."""
        results = {}
        for job_id in self.pending_jobs():
            try:
                job = self.run_processing_job(job_id, now=now)
                results[job_id] = job["stage"]
            except FeedUnavailable:
                results[job_id] = JobStage.SEGMENTED.value
        return results


# ---------------------------------------------------------------------------
# GeoJSON export


def export_trips_geojson(
    snapshot: StoreSnapshot,
    pseudonym: str | None = None,
    date_from: datetime | None = None,
    date_to: datetime | None = None,
    mode: str | None = None,
) -> dict:
    """One LineString feature per classified segment, coordinates in
    (lon, lat) order. Optional filters: owner pseudonym, segment start in
    [date_from, date_to), mode name. Unclassified segments are skipped."""
    trips = snapshot.keyed("trips")
    enrichments = snapshot.keyed("enrichments")
    features = []
    for segment_id in sorted(snapshot.keyed("segments")):
        segment = snapshot.get("segments", segment_id)
        if segment["mode"] is None:
            continue
        if pseudonym is not None and segment["owner"] != pseudonym:
            continue
        if mode is not None and segment["mode"] != mode:
            continue
        started_at = parse_instant(segment["started_at"])
        if date_from is not None and started_at < date_from:
            continue
        if date_to is not None and started_at >= date_to:
            continue
        trip = trips.get(segment["trip_id"])
        if trip is None:
            continue
        lo = segment["start_index"]
        hi = lo + segment["point_count"]
        coordinates = [[p["lon"], p["lat"]] for p in trip["points"][lo:hi]]
        properties = {
            "segment_id": segment_id,
            "trip_id": segment["trip_id"],
            "mode": segment["mode"],
            "duration_s": segment["duration_s"],
            "length_m": segment["length_m"],
        }
        enrichment = enrichments.get(segment_id)
        if enrichment is not None:
            properties["entry_stop"] = enrichment["entry_stop_id"]
            properties["exit_stop"] = enrichment["exit_stop_id"]
            properties["route"] = enrichment["route_id"]
        features.append(
            {
                "type": "Feature",
                "properties": properties,
                "geometry": {"type": "LineString", "coordinates": coordinates},
            }
        )
    return {"type": "FeatureCollection", "features": features}
