"""Instant parsing/formatting helpers. All wire timestamps are ISO-8601 UTC."""

from __future__ import annotations

from datetime import date, datetime, timezone


def parse_instant(value: str) -> datetime:
    """Parse an ISO-8601 instant; a trailing 'Z' or an explicit offset is required."""
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        raise ValueError(f"instant {value!r} has no timezone")
    return dt.astimezone(timezone.utc)


def format_instant(dt: datetime) -> str:
    """Render a timezone-aware datetime as ISO-8601 UTC with a Z suffix."""
    if dt.tzinfo is None:
        raise ValueError("naive datetime cannot be formatted as an instant")
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def seconds_since_midnight(dt: datetime) -> float:
    """Seconds elapsed since UTC midnight of the instant's own day."""
    utc = dt.astimezone(timezone.utc)
    return utc.hour * 3600 + utc.minute * 60 + utc.second + utc.microsecond / 1e6


def parse_date(value: str) -> date:
    """Accept YYYY-MM-DD or the compact YYYYMMDD used by transit calendars."""
    text = value.strip()
    if len(text) == 8 and text.isdigit():
        return date(int(text[:4]), int(text[4:6]), int(text[6:8]))
    return date.fromisoformat(text)
