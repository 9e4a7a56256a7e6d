"""Pseudonymization, consent and data-subject rights.

Raw identifiers (account name, e-mail, device id) are replaced at the system
boundary by a keyed hash, so the same user always maps to the same pseudonym
but nothing in the trip store can be traced back without the key. The
original identifier survives only inside the identity vault, sealed with a
key derived from the same master secret; deleting the vault entry makes the
pseudonym permanently anonymous. Access, erasure and consent withdrawal are
all keyed by pseudonym.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
from dataclasses import dataclass
from datetime import datetime, timezone

from cryptography.fernet import Fernet, InvalidToken

from .store import Store, canonical_json
from .timeutil import format_instant, parse_instant

MIN_KEY_BYTES = 32


class WeakKey(Exception):
    """Pseudonymization key shorter than the minimum."""


class UnknownPseudonym(Exception):
    """No vault entry for this pseudonym."""


def pseudonymize(identifier: str, key: bytes) -> str:
    """Deterministic keyed hash of an identifier: 64 lowercase hex chars.

    One-way for anyone without the vault; the same (identifier, key) pair
    always yields the same pseudonym so returning users keep their history.
    """
    if not identifier:
        raise ValueError("empty identifier")
    if len(key) < MIN_KEY_BYTES:
        raise WeakKey(f"key must be at least {MIN_KEY_BYTES} bytes, got {len(key)}")
    return hmac.new(key, identifier.encode("utf-8"), hashlib.sha256).hexdigest()


def _fernet(key: bytes) -> Fernet:
    # Fernet wants a 32-byte urlsafe-base64 key; derive it from the master key
    digest = hashlib.sha256(b"vault-seal:" + key).digest()
    return Fernet(base64.urlsafe_b64encode(digest))


@dataclass(frozen=True)
class ErasureReceipt:
    pseudonym: str
    trips_deleted: int
    points_deleted: int
    vault_deleted: bool


@dataclass(frozen=True)
class ConsentRecord:
    pseudonym: str
    policy_version: str
    granted_at: datetime
    withdrawn_at: datetime | None = None

    def __post_init__(self):
        if self.withdrawn_at is not None and self.withdrawn_at < self.granted_at:
            raise ValueError("withdrawn before granted")

    @property
    def active(self) -> bool:
        return self.withdrawn_at is None

    def to_record(self) -> dict:
        record = {
            "pseudonym": self.pseudonym,
            "policy_version": self.policy_version,
            "granted_at": format_instant(self.granted_at),
        }
        if self.withdrawn_at is not None:
            record["withdrawn_at"] = format_instant(self.withdrawn_at)
        return record

    @classmethod
    def from_record(cls, record: dict) -> "ConsentRecord":
        withdrawn = record.get("withdrawn_at")
        return cls(
            pseudonym=record["pseudonym"],
            policy_version=record["policy_version"],
            granted_at=parse_instant(record["granted_at"]),
            withdrawn_at=parse_instant(withdrawn) if withdrawn else None,
        )


class PrivacyGuard:
    """All identity handling for one store: the vault, consent and the
    subject rights (export, erase, withdrawal)."""

    def __init__(self, store: Store, key: bytes):
        if len(key) < MIN_KEY_BYTES:
            raise WeakKey(f"key must be at least {MIN_KEY_BYTES} bytes, got {len(key)}")
        self.store = store
        self._key = key
        self._sealer = _fernet(key)

    # -- identity -----------------------------------------------------------

    def register(self, identifier: str, now: datetime | None = None) -> str:
        """Map a raw identifier to its pseudonym, creating the vault entry
        on first contact. The identifier itself is stored only sealed."""
        pseudonym = pseudonymize(identifier, self._key)
        if self.store.get("vault", pseudonym) is None:
            self.store.put(
                "vault",
                pseudonym,
                {
                    "pseudonym": pseudonym,
                    "sealed_identifier": self._sealer.encrypt(
                        identifier.encode("utf-8")
                    ).decode("ascii"),
                    "created_at": format_instant(now or datetime.now(timezone.utc)),
                },
            )
        return pseudonym

    def is_known(self, pseudonym: str) -> bool:
        return self.store.get("vault", pseudonym) is not None

    def reveal(self, pseudonym: str) -> str:
        """Unseal the original identifier; only possible with the vault and
        the key, which is the point of pseudonymization over anonymization."""
        entry = self.store.get("vault", pseudonym)
        if entry is None:
            raise UnknownPseudonym(pseudonym)
        try:
            return self._sealer.decrypt(
                entry["sealed_identifier"].encode("ascii")
            ).decode("utf-8")
        except InvalidToken as exc:
            raise UnknownPseudonym(f"vault entry for {pseudonym} unreadable") from exc

    # -- consent ------------------------------------------------------------

    def grant_consent(
        self, pseudonym: str, policy_version: str, now: datetime | None = None
    ) -> ConsentRecord:
        record = ConsentRecord(
            pseudonym=pseudonym,
            policy_version=policy_version,
            granted_at=now or datetime.now(timezone.utc),
        )
        self.store.put("consents", pseudonym, record.to_record())
        return record

    def consent_of(self, pseudonym: str) -> ConsentRecord | None:
        record = self.store.get("consents", pseudonym)
        return ConsentRecord.from_record(record) if record else None

    def has_active_consent(self, pseudonym: str) -> bool:
        consent = self.consent_of(pseudonym)
        return consent is not None and consent.active

    def withdraw_consent(
        self, pseudonym: str, now: datetime | None = None
    ) -> ErasureReceipt:
        """Withdrawal erases the user's data but keeps the consent record
        itself, with withdrawn_at set, as the audit trail."""
        consent = self.consent_of(pseudonym)
        receipt = self.erase_user(pseudonym)
        if consent is not None and consent.active:
            updated = ConsentRecord(
                pseudonym=pseudonym,
                policy_version=consent.policy_version,
                granted_at=consent.granted_at,
                withdrawn_at=now or datetime.now(timezone.utc),
            )
            self.store.put("consents", pseudonym, updated.to_record())
        return receipt

    # -- subject rights -----------------------------------------------------

    def erase_user(self, pseudonym: str) -> ErasureReceipt:
        """Remove every stored trace of a pseudonym: trips with their points,
        segments, enrichments, processing jobs, buffered recordings,
        idempotency receipts and the vault entry. Consent records stay.
        Already materialized aggregate statistics are not rewritten.
        An unknown pseudonym yields a receipt of zeros."""
        trips_deleted = 0
        points_deleted = 0
        trip_ids = set()
        for trip_id, trip in self.store.items("trips"):
            if trip["owner"] == pseudonym:
                trip_ids.add(trip_id)
                trips_deleted += 1
                points_deleted += len(trip["points"])
                self.store.delete("trips", trip_id)

        segment_ids = set()
        for segment_id, segment in self.store.items("segments"):
            if segment["owner"] == pseudonym:
                segment_ids.add(segment_id)
                self.store.delete("segments", segment_id)
        for enrichment_id, _ in self.store.items("enrichments"):
            if enrichment_id in segment_ids:
                self.store.delete("enrichments", enrichment_id)
        for job_id, job in self.store.items("jobs"):
            if job["trip_id"] in trip_ids:
                self.store.delete("jobs", job_id)
        for key, _ in self.store.items("idempotency"):
            if key.startswith(f"{pseudonym}:"):
                self.store.delete("idempotency", key)
        self.store.delete("recordings", pseudonym)
        vault_deleted = self.store.delete("vault", pseudonym)

        return ErasureReceipt(
            pseudonym=pseudonym,
            trips_deleted=trips_deleted,
            points_deleted=points_deleted,
            vault_deleted=vault_deleted,
        )

    def export_user(self, pseudonym: str) -> str:
        """Everything stored for a pseudonym as JSON Lines: one record per
        line, kinds trip / segment / enrichment / consent. Lossless: feeding
        the dump to import_user_dump reproduces the records byte for byte.
        The sealed vault entry is deliberately not part of the dump."""
        if not self.is_known(pseudonym):
            raise UnknownPseudonym(pseudonym)
        lines = []

        def emit(kind: str, record: dict):
            lines.append(canonical_json({"kind": kind, "record": record}))

        segment_ids = set()
        for trip_id, trip in sorted(self.store.items("trips")):
            if trip["owner"] == pseudonym:
                emit("trip", trip)
        for segment_id, segment in sorted(self.store.items("segments")):
            if segment["owner"] == pseudonym:
                segment_ids.add(segment_id)
                emit("segment", segment)
        for enrichment_id, enrichment in sorted(self.store.items("enrichments")):
            if enrichment_id in segment_ids:
                emit("enrichment", enrichment)
        consent = self.store.get("consents", pseudonym)
        if consent is not None:
            emit("consent", consent)
        return "\n".join(lines) + ("\n" if lines else "")

    def import_user_dump(self, dump: str) -> dict[str, int]:
        """Inverse of export_user. Returns a count per record kind."""
        counts = {"trip": 0, "segment": 0, "enrichment": 0, "consent": 0}
        for line_no, line in enumerate(dump.splitlines(), start=1):
            if not line.strip():
                continue
            entry = json.loads(line)
            kind, record = entry["kind"], entry["record"]
            if kind == "trip":
                self.store.put("trips", record["trip_id"], record)
            elif kind == "segment":
                self.store.put("segments", record["segment_id"], record)
            elif kind == "enrichment":
                self.store.put("enrichments", record["segment_id"], record)
            elif kind == "consent":
                self.store.put("consents", record["pseudonym"], record)
            else:
                raise ValueError(f"line {line_no}: unknown record kind {kind!r}")
            counts[kind] += 1
        return counts
