"""Self-clustering: move instances toward the LP that receives most of their traffic."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Container, Mapping, Protocol

from .replication import PlacementMap
from .transport import InstanceId

log = logging.getLogger(__name__)

DEFAULT_PERIOD = 50
DEFAULT_THRESHOLD = 0.6


def default_cap(entities: int, replicas: int, lps: int) -> int:
    return math.ceil(2 * entities * replicas / lps)


@dataclass
class InteractionMatrix:
    """Envelopes routed per (sending instance, destination LP) in the current window."""

    counts: dict[InstanceId, Counter[int]] = field(default_factory=dict)
    window_start: int = 0

    def record(self, src: InstanceId, dst_lp: int, n: int = 1) -> None:
        c = self.counts.get(src)
        if c is None:
            c = self.counts[src] = Counter()
        c[dst_lp] += n

    def merge(self, other: Mapping[InstanceId, Mapping[int, int]]) -> None:
        for src, row in other.items():
            for lp, n in row.items():
                self.record(src, lp, n)

    def reset(self, window_start: int) -> None:
        self.counts = {}
        self.window_start = window_start


@dataclass(frozen=True)
class MigrationDecision:
    instance: InstanceId
    src: int
    dst: int
    epoch: int


def _argmax(row: Mapping[int, int]) -> int:
    return min(row, key=lambda lp: (-row[lp], lp))


def evaluate_migrations(
    matrix: InteractionMatrix,
    placement: PlacementMap,
    threshold: float = DEFAULT_THRESHOLD,
    cap: int | None = None,
    down: Container[int] = (),
) -> list[MigrationDecision]:
    """Propose a move for every instance whose traffic is concentrated elsewhere.

    Proposals are checked against the current placement only; conflicts between
    proposals in the same round are resolved by :func:`migrate`.
    """
    projected = placement.counts()
    epoch = placement.epoch + 1
    decisions = []
    for inst in sorted(matrix.counts):
        row = matrix.counts[inst]
        total = sum(row.values())
        if total == 0 or inst not in placement.assignment:
            continue
        here = placement.lp_of(inst)
        if here in down:
            continue
        target = _argmax(row)
        if target == here or target in down or row[target] / total <= threshold:
            continue
        siblings = {placement.lp_of(InstanceId(inst.entity, j)) for j in range(placement.replicas) if j != inst.replica}
        if target in siblings:
            continue
        if cap is not None and projected[target] + 1 > cap:
            continue
        projected[target] += 1
        projected[here] -= 1
        decisions.append(MigrationDecision(inst, here, target, epoch))
    return decisions


class InstanceHost(Protocol):
    def release_instance(self, instance: InstanceId) -> Any: ...
    def install_instance(self, instance: InstanceId, blob: Any) -> None: ...


@dataclass
class MigrationRound:
    placement: PlacementMap
    applied: list[MigrationDecision]
    skipped: list[MigrationDecision]


def migrate(
    decisions: list[MigrationDecision],
    placement: PlacementMap,
    hosts: Mapping[int, InstanceHost],
    cap: int | None = None,
) -> MigrationRound:
    """Apply ``decisions`` in order, moving state between ``hosts``.

    A decision that would put two siblings on one LP (or overflow ``cap``)
    given the moves already applied this round is skipped. The returned
    placement carries the next epoch.
    """
    applied, skipped = [], []
    counts = placement.counts()
    for d in decisions:
        if placement.assignment.get(d.instance) != d.src:
            skipped.append(d)
            continue
        siblings = [InstanceId(d.instance.entity, j) for j in range(placement.replicas) if j != d.instance.replica]
        if any(placement.lp_of(s) == d.dst for s in siblings) or (cap is not None and counts[d.dst] + 1 > cap):
            log.debug("skipping migration %s: constraint would be violated", d)
            skipped.append(d)
            continue
        blob = hosts[d.src].release_instance(d.instance)
        hosts[d.dst].install_instance(d.instance, blob)
        placement = placement.moved(d.instance, d.dst)
        counts[d.src] -= 1
        counts[d.dst] += 1
        applied.append(d)
    placement = PlacementMap(placement.num_lps, placement.replicas, placement.assignment, placement.epoch + 1)
    return MigrationRound(placement, applied, skipped)
