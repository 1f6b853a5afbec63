"""Time-stepped kernel: LP runtimes, the per-step barrier, and the run loop.

Every LP executes step ``t`` (filter due envelopes, run handlers, fan out and
corrupt outgoing traffic, route it), then waits at the barrier. Crashes are
applied at the barrier boundary before a step begins, migrations after a
step ends. The serial and threaded drivers share this code and produce
identical reports; the multi-process driver lives in :mod:`ftsim.procmode`.
"""

from __future__ import annotations

import logging
import pickle
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Protocol

from . import clustering
from .errors import BarrierTimeout, ConfigError, PlacementInfeasible, SimulationAborted
from .faults import FaultPlan, apply_crash, corrupt
from .ftfilter import DEFAULT_GRACE, QuorumBuffer, Verdict, filter_byzantine, filter_crash, flush_expired, payload_digest
from .p2p import P2PModel, P2PModelConfig
from .replication import FailureMode, LogicalMessage, PlacementMap, ReplicationPolicy, derived_seed, fan_out, place_instances, seed_for
from .report import Delivery, LpCounters, LpResult, SimReport, build_report
from .transport import Envelope, Inbox, InstanceId, RouteOutcome, route

log = logging.getLogger(__name__)

EXEC_MODES = ("serial", "threads", "processes")
OVERLAY_SALT = 0x0E7E_11A7


class EntityModel(Protocol):
    def init_state(self, entity: int, seed: int) -> Any: ...
    def on_message(self, state: Any, src: int, payload: bytes, t: int) -> list[LogicalMessage]: ...
    def on_step(self, state: Any, t: int) -> list[LogicalMessage]: ...
    def digest(self, state: Any) -> bytes: ...
    def stats(self, state: Any) -> dict[str, int]: ...


@dataclass
class SimConfig:
    num_lps: int = 4
    num_entities: int = 100
    policy: ReplicationPolicy = field(default_factory=ReplicationPolicy)
    total_timesteps: int = 10000
    global_seed: int = 42
    migration_enabled: bool = False
    migration_period: int = clustering.DEFAULT_PERIOD
    migration_threshold: float = clustering.DEFAULT_THRESHOLD
    lp_instance_cap: int | None = None
    model: P2PModelConfig = field(default_factory=P2PModelConfig)
    fault_plan: FaultPlan = field(default_factory=FaultPlan)
    grace: int = DEFAULT_GRACE
    exec_mode: str = "threads"
    endpoints: tuple[str, ...] = ()
    record_deliveries: bool = False
    trace_digests: bool = False
    barrier_timeout: float = 30.0

    @property
    def replicas(self) -> int:
        return self.policy.replicas

    @property
    def instance_cap(self) -> int:
        if self.lp_instance_cap is not None:
            return self.lp_instance_cap
        return clustering.default_cap(self.num_entities, self.replicas, self.num_lps)

    def validate(self) -> None:
        if self.num_lps < 1:
            raise ConfigError("num-lps must be at least 1")
        if self.num_entities < 1:
            raise ConfigError("num-entities must be at least 1")
        if self.total_timesteps < 1:
            raise ConfigError("total-timesteps must be at least 1")
        if self.num_lps < self.replicas:
            raise PlacementInfeasible(
                f"{self.policy.mode.value} f={self.policy.f} needs {self.replicas} LPs, only {self.num_lps} configured"
            )
        if self.migration_period < 1:
            raise ConfigError("migration-period must be at least 1")
        if not 0.0 <= self.migration_threshold <= 1.0:
            raise ConfigError("migration-threshold must lie in [0, 1]")
        if self.grace < 0:
            raise ConfigError("grace must be non-negative")
        if self.exec_mode not in EXEC_MODES:
            raise ConfigError(f"exec mode must be one of {EXEC_MODES}, got {self.exec_mode!r}")
        if self.endpoints and len(self.endpoints) != self.num_lps:
            raise ConfigError(f"endpoint table lists {len(self.endpoints)} entries for {self.num_lps} LPs")
        self.model.validate(self.num_entities)
        self.fault_plan.validate(self.num_lps)


def build_model(config: SimConfig) -> P2PModel:
    return P2PModel(config.num_entities, config.model, derived_seed(config.global_seed, OVERLAY_SALT))


@dataclass
class InstanceSlot:
    state: Any
    buffer: QuorumBuffer = field(default_factory=QuorumBuffer)


class LpRuntime:
    """One logical process: a set of hosted instances and their inbox."""

    def __init__(self, lp_id: int, config: SimConfig, model: EntityModel) -> None:
        self.id = lp_id
        self.config = config
        self.model = model
        self.replicas = config.replicas
        self.f = config.policy.f
        self.byzantine = config.policy.mode is FailureMode.BYZANTINE
        self.slots: dict[InstanceId, InstanceSlot] = {}
        self.inbox = Inbox()
        self.crashed = False
        self.counters = LpCounters()
        self.interactions = clustering.InteractionMatrix()
        self.deliveries: dict[InstanceId, set[Delivery]] = {}
        self.trace: dict[InstanceId, dict[int, str]] = {}
        self._received_extra = 0
        self._result: LpResult | None = None

    @property
    def running(self) -> bool:
        return not self.crashed

    def seed_instances(self, placement: PlacementMap) -> None:
        for inst in placement.instances_on(self.id):
            seed = seed_for(self.config.global_seed, inst.entity)
            self.slots[inst] = InstanceSlot(self.model.init_state(inst.entity, seed))

    def _harvest(self, buffer: QuorumBuffer) -> None:
        s = buffer.take_stats()
        c = self.counters
        c.delivered += s["delivered"]
        c.deduped += s["deduped"]
        c.equivocal += s["equivocal"]
        c.quorum_expired += s["expired_copies"]
        c.expired_entries += s["expired_entries"]

    def advance_timestep(self, t: int) -> list[Envelope]:
        """Deliver envelopes due at ``t``, run handlers, return outgoing envelopes."""
        if self.crashed:
            raise RuntimeError(f"LP {self.id} is crashed")
        due = self.inbox.pop_due(t)
        delivered: dict[InstanceId, list[Envelope]] = {}
        check = (lambda e, b: filter_byzantine(e, b, self.f)) if self.byzantine else filter_crash
        for e in due:
            slot = self.slots[e.dst]
            if check(e, slot.buffer) is Verdict.DELIVER:
                delivered.setdefault(e.dst, []).append(e)
        held = sum(s.buffer.held for s in self.slots.values())
        self.counters.quorum_held_peak = max(self.counters.quorum_held_peak, held)

        corruption = self.config.fault_plan.corruption_for(self.id, t)
        record = self.config.record_deliveries
        out: list[Envelope] = []
        for inst in sorted(self.slots):
            slot = self.slots[inst]
            emitted: list[LogicalMessage] = []
            for e in sorted(delivered.get(inst, ()), key=lambda e: e.logical_id):
                if record:
                    self.deliveries.setdefault(inst, set()).add(e.logical_id + (payload_digest(e.payload),))
                emitted.extend(self.model.on_message(slot.state, e.src.entity, e.payload, t))
            emitted.extend(self.model.on_step(slot.state, t))
            for seq, msg in enumerate(emitted):
                if msg.delivery_step <= t:
                    raise SimulationAborted(f"{inst} scheduled a message for step {msg.delivery_step} at step {t}")
                copies = fan_out(inst, msg, t, seq, self.replicas)
                if corruption is None:
                    out.extend(copies)
                else:
                    for c in copies:
                        out.extend(corrupt(c, corruption))
            flush_expired(slot.buffer, t, self.config.grace)
            self._harvest(slot.buffer)
            if self.config.trace_digests:
                self.trace.setdefault(inst, {})[t] = self.model.digest(slot.state).hex()
        return out

    def dispatch(
        self,
        outgoing: Iterable[Envelope],
        placement: PlacementMap,
        inboxes: Mapping[int, Inbox],
        down: set[int],
        send_frame: Callable[[int, bytes], None] | None = None,
    ) -> Counter[int]:
        """Route outgoing envelopes; returns envelopes lost per (crashed) destination LP."""
        lost: Counter[int] = Counter()
        c = self.counters
        track = self.config.migration_enabled
        for e in outgoing:
            outcome, lp = route(e, placement, inboxes, down, send_frame)
            c.sent += 1
            if lp == self.id:
                c.local_sends += 1
            else:
                c.remote_sends += 1
            if track:
                self.interactions.record(e.src, lp)
            if outcome is RouteOutcome.LOST:
                lost[lp] += 1
        return lost

    def step(self, t: int, placement: PlacementMap, inboxes: Mapping[int, Inbox], down: set[int]) -> Counter[int]:
        return self.dispatch(self.advance_timestep(t), placement, inboxes, down)

    def crash(self) -> LpResult:
        """Stop for good: queued envelopes and held copies are lost with the state."""
        for slot in self.slots.values():
            self._harvest(slot.buffer)
        lost = self.inbox.clear() + sum(s.buffer.held for s in self.slots.values())
        self.counters.lost_to_crash += lost
        self.crashed = True
        self.slots.clear()
        self._result = LpResult(self.id, True, self._snapshot_counters(), {}, self.deliveries, self.trace, {})
        return self._result

    def release_instance(self, instance: InstanceId) -> bytes:
        slot = self.slots.pop(instance)
        self._harvest(slot.buffer)
        pending = self.inbox.take_for(instance)
        self.counters.forwarded += len(pending) + slot.buffer.held
        return pickle.dumps((slot, pending), protocol=pickle.HIGHEST_PROTOCOL)

    def install_instance(self, instance: InstanceId, blob: bytes) -> None:
        slot, pending = pickle.loads(blob)
        self.slots[instance] = slot
        self.inbox.put_many(pending)
        self._received_extra += slot.buffer.held

    def take_interactions(self) -> dict[InstanceId, Counter[int]]:
        counts = self.interactions.counts
        self.interactions.reset(0)
        return counts

    def _snapshot_counters(self) -> LpCounters:
        c = LpCounters(**vars(self.counters))
        c.received = self.inbox.received + self._received_extra
        return c

    def finalize(self) -> LpResult:
        if self._result is not None:
            return self._result
        for slot in self.slots.values():
            self._harvest(slot.buffer)
        self.counters.inbox_residual = len(self.inbox)
        self.counters.quorum_residual = sum(s.buffer.held for s in self.slots.values())
        stats: Counter[str] = Counter()
        for slot in self.slots.values():
            stats.update(self.model.stats(slot.state))
        digests = {inst: self.model.digest(slot.state).hex() for inst, slot in sorted(self.slots.items())}
        self._result = LpResult(self.id, False, self._snapshot_counters(), digests, self.deliveries, self.trace, dict(stats))
        return self._result


DONE = "done"
SILENT = "silent"


@dataclass
class BarrierOutcome:
    next_step: int
    excluded: list[int]


class BarrierCoordinator:
    """Tracks which LPs take part in the barrier and applies the crash schedule."""

    def __init__(self, lp_ids: Iterable[int], plan: FaultPlan) -> None:
        self.plan = plan
        self.running: set[int] = set(lp_ids)
        self.crashed: set[int] = set()

    def release(self, t: int) -> list[int]:
        """Crash the LPs scheduled for ``t``; they sit out step ``t`` and all later ones."""
        victims = [lp for lp in self.plan.crashes_at(t) if lp in self.running]
        self.running.difference_update(victims)
        self.crashed.update(victims)
        return victims

    def sync(self, step: int, statuses: Mapping[int, str]) -> BarrierOutcome:
        excluded = []
        for lp in sorted(self.running):
            if statuses.get(lp, SILENT) == DONE:
                continue
            when = self.plan.crash_time(lp)
            if when is not None and when <= step:
                excluded.append(lp)
                continue
            raise BarrierTimeout(f"LP {lp} did not report step {step} and is not scheduled to crash")
        self.running.difference_update(excluded)
        self.crashed.update(excluded)
        return BarrierOutcome(step + 1, excluded)


def barrier_sync(coordinator: BarrierCoordinator, step: int, statuses: Mapping[int, str]) -> BarrierOutcome:
    return coordinator.sync(step, statuses)


def run_simulation(config: SimConfig) -> SimReport:
    config.validate()
    if config.exec_mode == "processes":
        from .procmode import run_processes

        return run_processes(config)
    return _run_in_process(config)


def _run_in_process(config: SimConfig) -> SimReport:
    model = build_model(config)
    placement = place_instances(config.num_entities, config.policy, config.num_lps)
    lps = {i: LpRuntime(i, config, model) for i in range(config.num_lps)}
    for lp in lps.values():
        lp.seed_instances(placement)
    inboxes = {i: lp.inbox for i, lp in lps.items()}
    barrier = BarrierCoordinator(lps, config.fault_plan)
    dead_letters: Counter[int] = Counter()
    applied = skipped = 0
    cap = config.instance_cap
    pool = ThreadPoolExecutor(max_workers=config.num_lps, thread_name_prefix="lp") if config.exec_mode == "threads" else None

    start = time.perf_counter()
    try:
        for t in range(config.total_timesteps):
            for victim in barrier.release(t):
                apply_crash(config.fault_plan, lps[victim], t)
                log.info("LP %d crashed before step %d", victim, t)
            down = set(barrier.crashed)
            active = sorted(barrier.running)
            statuses: dict[int, str] = {}
            if pool is None:
                for i in active:
                    dead_letters.update(lps[i].step(t, placement, inboxes, down))
                    statuses[i] = DONE
            else:
                futures = {pool.submit(lps[i].step, t, placement, inboxes, down): i for i in active}
                finished, _ = wait(futures, timeout=config.barrier_timeout)
                for fut in finished:
                    exc = fut.exception()
                    if exc is not None:
                        raise SimulationAborted(f"LP {futures[fut]} failed at step {t}: {exc!r}") from exc
                    dead_letters.update(fut.result())
                    statuses[futures[fut]] = DONE
            barrier.sync(t, statuses)

            if config.migration_enabled and (t + 1) % config.migration_period == 0 and t + 1 < config.total_timesteps:
                matrix = clustering.InteractionMatrix(window_start=t + 1)
                for i in sorted(barrier.running):
                    matrix.merge(lps[i].take_interactions())
                decisions = clustering.evaluate_migrations(matrix, placement, config.migration_threshold, cap, down)
                rnd = clustering.migrate(decisions, placement, lps, cap)
                placement = rnd.placement
                applied += len(rnd.applied)
                skipped += len(rnd.skipped)
                _check_placement(placement)
    finally:
        if pool is not None:
            pool.shutdown(wait=False, cancel_futures=True)
    elapsed = time.perf_counter() - start

    results = [lp.finalize() for lp in lps.values()]
    return build_report(config, results, dead_letters, placement.epoch, applied, skipped, elapsed)


def _check_placement(placement: PlacementMap) -> None:
    problems = placement.violations()
    if problems:
        raise SimulationAborted(f"placement invariant broken at epoch {placement.epoch}: {problems[:3]}")
