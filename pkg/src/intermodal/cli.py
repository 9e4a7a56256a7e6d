"""Operator command line: feed loading, ingestion, pipeline, pilot, serving.

Output is one JSON line per command where a machine might consume it, plain
tables where a human will. Exit codes: 0 ok, 1 user error (bad input, bad
flags, missing files), 2 internal error.
"""

from __future__ import annotations

import argparse
import os
import sys
from collections import Counter
from dataclasses import asdict
from pathlib import Path

from .analytics import (
    InsufficientHistory,
    dataset_stats,
    event_impact_report,
    mode_share,
)
from .config import PipelineConfig, ServiceConfig
from .geo import GeoPoint
from .gtfs import GtfsError, load_gtfs
from .pilot import (
    SyntheticPilotSpec,
    evaluate_pilot,
    format_accuracy_table,
    generate_pilot,
    load_pilot,
    write_pilot,
)
from .privacy import PrivacyGuard, WeakKey
from .service import IngestService
from .sources import (
    SourceError,
    fcd_to_record,
    fcd_from_record,
    load_street_segments,
    notification_to_record,
    parse_fcd_csv,
    parse_query_log_csv,
    parse_traffic_feed,
    query_from_record,
    query_to_record,
    street_from_record,
    street_to_record,
)
from .store import Store, canonical_json
from .timeutil import parse_instant
from .traces import TooFewPoints


class CliError(Exception):
    """Anything the operator can fix: bad flags, missing files, bad data."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage faults are user errors
        raise CliError(message)


def load_or_create_key(path: str) -> bytes:
    key_path = Path(path)
    if key_path.exists():
        return key_path.read_bytes()
    key = os.urandom(32)
    key_path.parent.mkdir(parents=True, exist_ok=True)
    key_path.write_bytes(key)
    key_path.chmod(0o600)
    return key


def _service_config(args) -> ServiceConfig:
    config = ServiceConfig().apply_env()
    if args.store is not None:
        config.store_path = args.store
    if args.key_file is not None:
        config.privacy_key_path = args.key_file
    if args.gtfs is not None:
        config.feed_dir = args.gtfs
    if getattr(args, "host", None) is not None:
        config.host = args.host
    if getattr(args, "port", None) is not None:
        config.port = args.port
    return config


def _pipeline_config(args) -> PipelineConfig:
    if args.config is not None:
        return PipelineConfig.from_file(args.config)
    return PipelineConfig()


def _open_feed(service_config: ServiceConfig):
    if service_config.feed_dir is None:
        return None
    return load_gtfs(service_config.feed_dir)


def _build_service(args) -> IngestService:
    service_config = _service_config(args)
    store = Store(service_config.store_path)
    guard = PrivacyGuard(store, load_or_create_key(service_config.privacy_key_path))
    return IngestService(
        store, guard, _pipeline_config(args), feed=_open_feed(service_config)
    )


def _emit(payload: dict):
    print(canonical_json(payload))


# ---------------------------------------------------------------------------
# command handlers


def cmd_gtfs_load(args) -> int:
    feed = load_gtfs(args.directory)
    _emit(feed.counts())
    return 0


_INGEST_COLLECTIONS = {
    "fcd": "fcd",
    "queries": "queries",
    "feed": "notifications",
    "segments": "streets",
}


def cmd_ingest(args) -> int:
    path = Path(args.file)
    if not path.exists():
        raise CliError(f"no such file: {path}")
    text = path.read_text(encoding="utf-8")

    failed = 0
    if args.kind == "fcd":
        records, errors = parse_fcd_csv(text)
        rows = [fcd_to_record(r) for r in records]
        failed = len(errors)
    elif args.kind == "queries":
        queries, errors = parse_query_log_csv(text)
        rows = [query_to_record(q) for q in queries]
        failed = len(errors)
    elif args.kind == "feed":
        rows = [notification_to_record(n) for n in parse_traffic_feed(text)]
    else:
        rows = [street_to_record(s) for s in load_street_segments(text)]

    store = Store(_service_config(args).store_path)
    store.extend(_INGEST_COLLECTIONS[args.kind], rows)
    _emit({"ok": len(rows), "failed": failed})
    return 0


def cmd_pipeline_run(args) -> int:
    service = _build_service(args)
    results = service.process_pending()
    tally = Counter(results.values())
    _emit({stage: tally[stage] for stage in sorted(tally)})
    return 0


def cmd_pilot_generate(args) -> int:
    spec = SyntheticPilotSpec(
        bicycle_trips=args.bicycle,
        car_trips=args.car,
        tram_trips=args.tram,
        bus_trips=args.bus,
        gps_noise_sigma_m=args.noise_sigma,
        label_corruption=args.label_corruption,
        seed=args.seed,
    )
    bundle = generate_pilot(spec)
    write_pilot(bundle, args.out)
    _emit({"trips": len(bundle.trips), "out": str(args.out)})
    return 0


def cmd_pilot_evaluate(args) -> int:
    bundle = load_pilot(args.dir)
    report = evaluate_pilot(bundle, _pipeline_config(args))
    print(format_accuracy_table(report))
    return 0


def cmd_report_stats(args) -> int:
    store = Store(_service_config(args).store_path)
    _emit(asdict(dataset_stats(store.snapshot())))
    return 0


def cmd_report_mode_share(args) -> int:
    store = Store(_service_config(args).store_path)
    snapshot = store.snapshot()
    pairs = [
        (segment["mode"], segment["duration_s"])
        for segment in snapshot.keyed("segments").values()
        if segment["mode"] is not None
        and (args.user is None or segment["owner"] == args.user)
    ]
    share = mode_share(pairs)
    _emit(
        {
            "total_trips": share.total_trips,
            "rows": {name: asdict(row) for name, row in share.rows.items()},
        }
    )
    return 0


def cmd_report_impact(args) -> int:
    service_config = _service_config(args)
    feed = _open_feed(service_config)
    if feed is None:
        raise CliError("event impact needs --gtfs (or INTERMODAL_FEED_DIR)")
    store = Store(service_config.store_path)
    report = event_impact_report(
        venue=GeoPoint(args.lat, args.lon),
        event_time=parse_instant(args.time),
        radius_m=args.radius,
        horizon_s=args.horizon,
        fcd_records=[fcd_from_record(r) for r in store.records("fcd")],
        queries=[query_from_record(r) for r in store.records("queries")],
        streets=[street_from_record(r) for r in store.records("streets")],
        feed=feed,
        config=_pipeline_config(args),
    )
    from .api import impact_body

    _emit(impact_body(report))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app

    service_config = _service_config(args)
    service = _build_service(args)
    uvicorn.run(
        create_app(service), host=service_config.host, port=service_config.port
    )
    return 0


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="intermodal", description=__doc__)
    parser.add_argument("--store", help="store directory (default ./mobility-store)")
    parser.add_argument("--key-file", help="privacy key path (default ./privacy.key)")
    parser.add_argument("--gtfs", help="GTFS feed directory")
    parser.add_argument("--config", help="pipeline config JSON file")
    commands = parser.add_subparsers(dest="command", required=True)

    gtfs = commands.add_parser("gtfs").add_subparsers(dest="sub", required=True)
    gtfs_load = gtfs.add_parser("load")
    gtfs_load.add_argument("directory")
    gtfs_load.set_defaults(handler=cmd_gtfs_load)

    ingest = commands.add_parser("ingest")
    ingest.add_argument("kind", choices=sorted(_INGEST_COLLECTIONS))
    ingest.add_argument("file")
    ingest.set_defaults(handler=cmd_ingest)

    pipeline = commands.add_parser("pipeline").add_subparsers(dest="sub", required=True)
    pipeline.add_parser("run").set_defaults(handler=cmd_pipeline_run)

    pilot = commands.add_parser("pilot").add_subparsers(dest="sub", required=True)
    generate = pilot.add_parser("generate")
    generate.add_argument("--out", required=True)
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--noise-sigma", type=float, default=0.0)
    generate.add_argument("--label-corruption", type=float, default=0.0)
    generate.add_argument("--bicycle", type=int, default=16)
    generate.add_argument("--car", type=int, default=14)
    generate.add_argument("--tram", type=int, default=13)
    generate.add_argument("--bus", type=int, default=15)
    generate.set_defaults(handler=cmd_pilot_generate)
    evaluate = pilot.add_parser("evaluate")
    evaluate.add_argument("--dir", required=True)
    evaluate.set_defaults(handler=cmd_pilot_evaluate)

    report = commands.add_parser("report").add_subparsers(dest="sub", required=True)
    report.add_parser("stats").set_defaults(handler=cmd_report_stats)
    share = report.add_parser("mode-share")
    share.add_argument("--user", default=None, help="pseudonym; omit for everyone")
    share.set_defaults(handler=cmd_report_mode_share)
    impact = report.add_parser("impact")
    impact.add_argument("--lat", type=float, required=True)
    impact.add_argument("--lon", type=float, required=True)
    impact.add_argument("--time", required=True, help="event time, ISO-8601 UTC")
    impact.add_argument("--radius", type=float, default=500.0)
    impact.add_argument("--horizon", type=float, default=7200.0)
    impact.set_defaults(handler=cmd_report_impact)

    serve = commands.add_parser("serve")
    serve.add_argument("--host", default=None)
    serve.add_argument("--port", type=int, default=None)
    serve.set_defaults(handler=cmd_serve)

    return parser


_USER_ERRORS = (
    CliError,
    SourceError,
    GtfsError,
    WeakKey,
    TooFewPoints,
    InsufficientHistory,
    ValueError,
    OSError,
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except _USER_ERRORS as exc:
        print(
            canonical_json({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    except Exception as exc:  # anything unexpected is an internal error
        print(
            canonical_json({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
