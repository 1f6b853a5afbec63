"""Receiver-side filtering of replicated envelopes.

Crash mode trusts senders and delivers the first copy of each logical
message. Byzantine mode delivers a payload once f+1 distinct sender replicas
have sent byte-identical copies of it.

Every offered copy ends in exactly one fate tallied in :attr:`QuorumBuffer.stats`:
``delivered``, ``deduped`` (duplicates, excess and equivocal copies, and held
copies retired when their message is delivered) or ``expired_copies``. Copies
still held are reported by :attr:`QuorumBuffer.held`.
"""

from __future__ import annotations

import enum
import hashlib
from collections import Counter
from dataclasses import dataclass, field

from .transport import Envelope

DEFAULT_GRACE = 16

LogicalId = tuple[int, int, int, int]


class Verdict(enum.Enum):
    DELIVER = "deliver"
    HOLD = "hold"
    DROP_DUPLICATE = "drop-duplicate"
    DROP_EXCESS = "drop-excess"
    DROP_EQUIVOCAL = "drop-equivocal"


def payload_digest(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


@dataclass
class _Entry:
    delivery_step: int
    delivered: bool = False
    # sender replica -> (digest, payload) of the first copy it sent
    votes: dict[int, tuple[int, bytes]] = field(default_factory=dict)
    pending: int = 0


@dataclass(frozen=True)
class ExpiryReport:
    entries: int = 0
    copies: int = 0


class QuorumBuffer:
    """Partially confirmed logical messages for one destination instance."""

    def __init__(self) -> None:
        self.entries: dict[LogicalId, _Entry] = {}
        self.held = 0
        self.stats: Counter[str] = Counter()

    def take_stats(self) -> Counter[str]:
        out, self.stats = self.stats, Counter()
        return out

    def __len__(self) -> int:
        return len(self.entries)


def filter_crash(e: Envelope, buffer: QuorumBuffer) -> Verdict:
    lid = e.logical_id
    entry = buffer.entries.get(lid)
    if entry is not None and entry.delivered:
        buffer.stats["deduped"] += 1
        return Verdict.DROP_DUPLICATE
    buffer.entries[lid] = _Entry(e.delivery_step, delivered=True)
    buffer.stats["delivered"] += 1
    return Verdict.DELIVER


def filter_byzantine(e: Envelope, buffer: QuorumBuffer, f: int) -> Verdict:
    lid = e.logical_id
    entry = buffer.entries.get(lid)
    if entry is None:
        entry = buffer.entries[lid] = _Entry(e.delivery_step)
    if entry.delivered:
        buffer.stats["deduped"] += 1
        return Verdict.DROP_EXCESS

    digest = payload_digest(e.payload)
    replica = e.src.replica
    prior = entry.votes.get(replica)
    if prior is not None:
        buffer.stats["deduped"] += 1
        if prior[0] == digest and prior[1] == e.payload:
            # the same instance never counts twice toward a quorum
            return Verdict.HOLD
        buffer.stats["equivocal"] += 1
        return Verdict.DROP_EQUIVOCAL

    entry.votes[replica] = (digest, e.payload)
    matching = sum(1 for d, p in entry.votes.values() if d == digest and p == e.payload)
    if matching >= f + 1:
        entry.delivered = True
        buffer.stats["delivered"] += 1
        buffer.stats["deduped"] += entry.pending
        buffer.held -= entry.pending
        entry.pending = 0
        return Verdict.DELIVER
    entry.pending += 1
    buffer.held += 1
    return Verdict.HOLD


def flush_expired(buffer: QuorumBuffer, horizon: int, grace: int = DEFAULT_GRACE) -> ExpiryReport:
    """Drop entries whose delivery step is older than ``horizon - grace``.

    Delivered entries vanish silently; undelivered ones are counted as expired.
    """
    cutoff = horizon - grace
    entries = copies = 0
    for lid in [lid for lid, en in buffer.entries.items() if en.delivery_step < cutoff]:
        entry = buffer.entries.pop(lid)
        if not entry.delivered:
            entries += 1
            copies += entry.pending
    buffer.held -= copies
    buffer.stats["expired_entries"] += entries
    buffer.stats["expired_copies"] += copies
    return ExpiryReport(entries, copies)
