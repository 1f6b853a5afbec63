"""Run results: per-LP counters, per-entity digests, and the report digest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import TYPE_CHECKING, Any

from .transport import InstanceId

if TYPE_CHECKING:
    from .kernel import SimConfig

LOST = "lost"
DIVERGENT = "divergent"


@dataclass
class LpCounters:
    """Envelope accounting for one LP.

    ``received`` counts every envelope routed to the LP, including those
    addressed to it after it crashed. Each received envelope ends in exactly
    one of the fate counters listed in :data:`FATES`.
    """

    sent: int = 0
    received: int = 0
    delivered: int = 0
    deduped: int = 0
    equivocal: int = 0
    quorum_expired: int = 0
    expired_entries: int = 0
    lost_to_crash: int = 0
    forwarded: int = 0
    quorum_residual: int = 0
    inbox_residual: int = 0
    quorum_held_peak: int = 0
    local_sends: int = 0
    remote_sends: int = 0

    def fates(self) -> int:
        return sum(getattr(self, name) for name in FATES)

    def conserved(self) -> bool:
        return self.fates() == self.received

    def __add__(self, other: LpCounters) -> LpCounters:
        out = LpCounters()
        for f in fields(self):
            if f.name == "quorum_held_peak":
                setattr(out, f.name, max(self.quorum_held_peak, other.quorum_held_peak))
            else:
                setattr(out, f.name, getattr(self, f.name) + getattr(other, f.name))
        return out


FATES = ("delivered", "deduped", "quorum_expired", "lost_to_crash", "forwarded", "quorum_residual", "inbox_residual")
COUNTER_NAMES = tuple(f.name for f in fields(LpCounters))

# (src entity, dst entity, send step, seq, payload digest)
Delivery = tuple[int, int, int, int, int]


@dataclass
class LpResult:
    """What an LP hands back to the coordinator when it finishes or crashes."""

    id: int
    crashed: bool
    counters: LpCounters
    instance_digests: dict[InstanceId, str] = field(default_factory=dict)
    deliveries: dict[InstanceId, set[Delivery]] = field(default_factory=dict)
    trace: dict[InstanceId, dict[int, str]] = field(default_factory=dict)
    model_stats: dict[str, int] = field(default_factory=dict)


@dataclass
class SimReport:
    config: SimConfig
    wall_clock_seconds: float
    lp_counters: dict[int, LpCounters]
    instance_digests: dict[InstanceId, str]
    entity_digests: dict[int, str]
    delivery_digests: dict[int, str]
    placement_epochs: int
    migrations_applied: int
    migrations_skipped: int
    model_stats: dict[str, int]
    crashed_lps: list[int]
    deliveries: dict[int, frozenset[Delivery]] | None = None
    trace: dict[InstanceId, list[str]] | None = None

    def totals(self) -> LpCounters:
        out = LpCounters()
        for c in self.lp_counters.values():
            out = out + c
        return out

    def delivered_set(self) -> frozenset[Delivery]:
        if self.deliveries is None:
            raise ValueError("run was not configured with record-deliveries")
        return frozenset().union(*self.deliveries.values())

    def state_digest(self) -> str:
        return _hash_obj(sorted(self.entity_digests.items()))

    def delivery_digest(self) -> str:
        return _hash_obj(sorted(self.delivery_digests.items()))

    def content(self) -> dict[str, Any]:
        """Everything that must match between equivalent runs (wall clock and exec mode excluded)."""
        return {
            "lp_counters": {str(k): asdict(v) for k, v in sorted(self.lp_counters.items())},
            "entity_digests": {str(k): v for k, v in sorted(self.entity_digests.items())},
            "delivery_digests": {str(k): v for k, v in sorted(self.delivery_digests.items())},
            "placement_epochs": self.placement_epochs,
            "migrations_applied": self.migrations_applied,
            "migrations_skipped": self.migrations_skipped,
            "model_stats": dict(sorted(self.model_stats.items())),
            "crashed_lps": sorted(self.crashed_lps),
        }

    def digest(self) -> str:
        return _hash_obj(self.content())


def _hash_obj(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def delivery_set_digest(entries: set[Delivery] | frozenset[Delivery]) -> str:
    h = hashlib.blake2b(digest_size=16)
    for d in sorted(entries):
        h.update(repr(d).encode())
        h.update(b";")
    return h.hexdigest()


def build_report(
    config: SimConfig,
    results: list[LpResult],
    dead_letters: dict[int, int],
    placement_epochs: int,
    migrations_applied: int,
    migrations_skipped: int,
    elapsed: float,
) -> SimReport:
    counters: dict[int, LpCounters] = {}
    instance_digests: dict[InstanceId, str] = {}
    per_instance: dict[InstanceId, set[Delivery]] = {}
    trace: dict[InstanceId, dict[int, str]] = {}
    stats: dict[str, int] = {}
    for r in sorted(results, key=lambda r: r.id):
        c = LpCounters(**asdict(r.counters))
        lost = dead_letters.get(r.id, 0)
        c.received += lost
        c.lost_to_crash += lost
        counters[r.id] = c
        instance_digests.update(r.instance_digests)
        for inst, ds in r.deliveries.items():
            per_instance.setdefault(inst, set()).update(ds)
        for inst, steps in r.trace.items():
            trace.setdefault(inst, {}).update(steps)
        for k, v in r.model_stats.items():
            stats[k] = stats.get(k, 0) + v

    entity_digests = {}
    for e in range(config.num_entities):
        ids = [InstanceId(e, j) for j in range(config.replicas)]
        live = {instance_digests[i] for i in ids if i in instance_digests}
        entity_digests[e] = LOST if not live else live.pop() if len(live) == 1 else DIVERGENT

    deliveries = None
    delivery_digests: dict[int, str] = {}
    if config.record_deliveries:
        union: dict[int, set[Delivery]] = {e: set() for e in range(config.num_entities)}
        for inst, ds in per_instance.items():
            union[inst.entity].update(ds)
        deliveries = {e: frozenset(s) for e, s in union.items()}
        delivery_digests = {e: delivery_set_digest(s) for e, s in union.items()}

    return SimReport(
        config=config,
        wall_clock_seconds=elapsed,
        lp_counters=counters,
        instance_digests=instance_digests,
        entity_digests=entity_digests,
        delivery_digests=delivery_digests,
        placement_epochs=placement_epochs,
        migrations_applied=migrations_applied,
        migrations_skipped=migrations_skipped,
        model_stats=stats,
        crashed_lps=sorted(r.id for r in results if r.crashed),
        deliveries=deliveries,
        trace={i: [d for _, d in sorted(s.items())] for i, s in trace.items()} if config.trace_digests else None,
    )
