"""Entity replication: replica counts, placement, seeding and message fan-out."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .errors import ConfigError, PlacementInfeasible
from .transport import Envelope, InstanceId

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class FailureMode(str, enum.Enum):
    NONE = "none"
    CRASH = "crash"
    BYZANTINE = "byzantine"


@dataclass(frozen=True)
class ReplicationPolicy:
    mode: FailureMode = FailureMode.NONE
    f: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", FailureMode(self.mode))
        if self.f < 0:
            raise ConfigError(f"tolerated faults must be non-negative, got {self.f}")
        if self.mode is FailureMode.NONE and self.f != 0:
            raise ConfigError("failure mode 'none' requires f=0")

    @property
    def replicas(self) -> int:
        return required_instances(self)


def required_instances(policy: ReplicationPolicy) -> int:
    if policy.mode is FailureMode.CRASH:
        return policy.f + 1
    if policy.mode is FailureMode.BYZANTINE:
        return 2 * policy.f + 1
    return 1


@dataclass
class PlacementMap:
    """Instance to LP assignment. Treated as immutable; ``moved`` returns a copy."""

    num_lps: int
    replicas: int
    assignment: dict[InstanceId, int] = field(default_factory=dict)
    epoch: int = 0

    def lp_of(self, instance: InstanceId) -> int:
        return self.assignment[instance]

    def instances_on(self, lp: int) -> list[InstanceId]:
        return sorted(i for i, where in self.assignment.items() if where == lp)

    def lps_of_entity(self, entity: int) -> list[int]:
        return [self.assignment[InstanceId(entity, j)] for j in range(self.replicas)]

    def counts(self) -> Counter[int]:
        c: Counter[int] = Counter({lp: 0 for lp in range(self.num_lps)})
        c.update(self.assignment.values())
        return c

    def violations(self) -> list[str]:
        """Every breach of the distinct-LP and completeness invariants."""
        problems = []
        by_entity: dict[int, list[int]] = {}
        for inst, lp in self.assignment.items():
            if not 0 <= lp < self.num_lps:
                problems.append(f"{inst} mapped to nonexistent LP {lp}")
            if not 0 <= inst.replica < self.replicas:
                problems.append(f"{inst} has replica index outside 0..{self.replicas - 1}")
            by_entity.setdefault(inst.entity, []).append(lp)
        for entity, lps in by_entity.items():
            if len(lps) != self.replicas:
                problems.append(f"entity {entity} has {len(lps)} mapped instances, expected {self.replicas}")
            if len(set(lps)) != len(lps):
                problems.append(f"entity {entity} has sibling instances sharing an LP: {sorted(lps)}")
        return problems

    def moved(self, instance: InstanceId, lp: int) -> PlacementMap:
        assignment = dict(self.assignment)
        assignment[instance] = lp
        return PlacementMap(self.num_lps, self.replicas, assignment, self.epoch)

    def as_rows(self) -> list[tuple[int, int, int]]:
        return [(i.entity, i.replica, lp) for i, lp in sorted(self.assignment.items())]

    @classmethod
    def from_rows(cls, num_lps: int, replicas: int, rows: Iterable[tuple[int, int, int]], epoch: int = 0) -> PlacementMap:
        return cls(num_lps, replicas, {InstanceId(e, j): lp for e, j, lp in rows}, epoch)


def place_instances(entities: int, policy: ReplicationPolicy, lps: int) -> PlacementMap:
    """Round-robin over the flattened instance list.

    Instance ``(e, j)`` goes to LP ``(e*M + j) mod L``: the M replicas of an
    entity occupy M consecutive LPs (distinct because M <= L) and the N*M
    instances spread over the LPs with counts differing by at most one.
    """
    m = policy.replicas
    if lps < m:
        raise PlacementInfeasible(f"{m} replicas per entity need at least {m} LPs, only {lps} available")
    if entities < 0:
        raise ConfigError("entity count must be non-negative")
    assignment = {InstanceId(e, j): (e * m + j) % lps for e in range(entities) for j in range(m)}
    return PlacementMap(lps, m, assignment)


def _mix64(z: int) -> int:
    # SplitMix64 finalizer: a bijection on 64-bit integers.
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


def seed_for(global_seed: int, entity: int) -> int:
    """Per-entity PRNG seed shared by all replicas of ``entity``.

    The replica index is not an input. For a fixed global seed the map
    entity -> seed is injective over 64-bit entity ids.
    """
    base = _mix64(global_seed & MASK64)
    return _mix64((base + ((entity + 1) & MASK64) * _GOLDEN) & MASK64)


def derived_seed(global_seed: int, salt: int) -> int:
    """Seed for a global stream (e.g. overlay construction) separate from entity seeds."""
    return _mix64(_mix64(global_seed & MASK64) ^ _mix64(salt & MASK64))


class LogicalMessage(NamedTuple):
    """A model-level send: destination entity, delivery step, payload."""

    dst: int
    delivery_step: int
    payload: bytes


def fan_out(
    src: InstanceId,
    msg: LogicalMessage,
    send_step: int,
    seq: int,
    placement: PlacementMap | int,
) -> list[Envelope]:
    """One envelope per replica of the destination entity, all sharing a logical id."""
    replicas = placement if isinstance(placement, int) else placement.replicas
    return [
        Envelope(src, InstanceId(msg.dst, j), send_step, msg.delivery_step, seq, msg.payload)
        for j in range(replicas)
    ]

