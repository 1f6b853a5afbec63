"""Acceptance gate: one test per criterion, reported as pass/fail lines at the end of the run."""

import itertools
import time

import mpmath
import pytest
from hypothesis import HealthCheck, given, settings

from conftest import with_
from ftsim import ByzantineFault, FailureMode, FaultPlan, ReplicationPolicy, SimConfig, run_simulation
from ftsim.clustering import InteractionMatrix, evaluate_migrations, migrate
from ftsim.ftfilter import QuorumBuffer, Verdict, filter_byzantine, filter_crash
from ftsim.harness.reliability import DAY, HOUR, ONE_YEAR_MTTF_RATE, WEEK, ReliabilityQuery, reliability
from ftsim.replication import place_instances
from ftsim.transport import decode, encode, InstanceId
from test_clustering import FakeHost, scenarios
from test_ftfilter import copy, oracle_quorum_index, sequences
from test_transport import GOLDEN


def scenario(mode="none", f=0, **kw):
    base = dict(num_lps=4, num_entities=100, total_timesteps=2000, global_seed=42, exec_mode="threads", record_deliveries=True)
    base.update(kw)
    return SimConfig(policy=ReplicationPolicy(FailureMode(mode), f), **base)


_cache: dict = {}


def fault_free(mode, f):
    key = (mode, f)
    if key not in _cache:
        _cache[key] = run_simulation(scenario(mode, f))
    return _cache[key]


def test_criterion_1_crash_equivalence():
    ref = fault_free("crash", 1)
    run = run_simulation(with_(scenario("crash", 1), fault_plan=FaultPlan(crashes=((2, 500),))))
    assert run.crashed_lps == [2]
    assert run.entity_digests == ref.entity_digests
    assert "lost" not in run.entity_digests.values()
    assert run.delivered_set() == ref.delivered_set()
    assert run.wall_clock_seconds < 30


def test_criterion_2_byzantine_safety_and_liveness():
    ref = fault_free("byzantine", 1)
    run = run_simulation(with_(scenario("byzantine", 1), fault_plan=FaultPlan(byzantine=(ByzantineFault(1, 0, "flip-payload"),))))
    corrupted = run.delivered_set() - ref.delivered_set()
    assert not corrupted
    assert run.delivered_set() == ref.delivered_set()
    assert run.entity_digests == ref.entity_digests
    # one faulty LP leaves every sender with two correct instances
    totals = run.totals()
    assert totals.quorum_expired == 0 and totals.expired_entries == 0
    assert run.wall_clock_seconds < 60


def test_criterion_3_quorum_tightness():
    ref = fault_free("byzantine", 1)
    plan = FaultPlan(byzantine=(ByzantineFault(0, 0, "flip-payload"), ByzantineFault(1, 0, "flip-payload")))
    run = run_simulation(with_(scenario("byzantine", 1), fault_plan=plan))
    safety_holds = not (run.delivered_set() - ref.delivered_set())
    assert not safety_holds


def test_criterion_4_message_amplification():
    sent = [fault_free(mode, f).totals().sent for mode, f in (("none", 0), ("crash", 1), ("byzantine", 1))]
    assert sent[0] > 0
    assert (sent[1], sent[2]) == (4 * sent[0], 9 * sent[0])
    digests = {fault_free(mode, f).state_digest() for mode, f in (("none", 0), ("crash", 1), ("byzantine", 1))}
    assert len(digests) == 1


def test_criterion_5_reliability():
    start = time.perf_counter()
    mpmath.mp.dps = 60
    for n in (10, 100, 1000):
        for t in (HOUR, DAY, WEEK):
            got = reliability(ReliabilityQuery(n, ONE_YEAR_MTTF_RATE, t))
            ref = mpmath.exp(-n * mpmath.mpf("2.7573e-8") * t)
            assert abs(mpmath.mpf(got) / ref - 1) < 1e-12
    assert reliability(ReliabilityQuery(1000, ONE_YEAR_MTTF_RATE, DAY)) < 0.1
    curve = [reliability(ReliabilityQuery(n, ONE_YEAR_MTTF_RATE, DAY)) for n in (1, 10, 100, 1000, 10000)]
    assert all(a > b for a, b in zip(curve, curve[1:]))
    assert time.perf_counter() - start < 1.0


@pytest.mark.parametrize("kw", [
    dict(),
    dict(mode="crash", f=1, fault_plan=FaultPlan(crashes=((3, 70),)), migration_enabled=True, migration_period=20, migration_threshold=0.3),
    dict(mode="byzantine", f=1, fault_plan=FaultPlan(byzantine=(ByzantineFault(0, 5, "garble-seq"),)), exec_mode="serial"),
])
def test_criterion_6_determinism(kw):
    kw = dict(kw)
    mode, f = kw.pop("mode", "none"), kw.pop("f", 0)
    cfg = scenario(mode, f, num_entities=60, total_timesteps=300, **kw)
    a, b = run_simulation(cfg), run_simulation(cfg)
    assert a.content() == b.content()
    assert a.digest() == b.digest()


@settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(scenarios())
def _placement_property(case):
    policy, lps, n, cap, rounds, threshold = case
    placement = place_instances(n, policy, lps)
    assert placement.violations() == []
    hosts = {lp: FakeHost(placement, lp) for lp in range(lps)}
    for traffic in rounds:
        matrix = InteractionMatrix()
        for e, j, lp, k in traffic:
            matrix.record(InstanceId(e, j), lp, k)
        before = placement.counts()
        placement = migrate(evaluate_migrations(matrix, placement, threshold, cap), placement, hosts, cap).placement
        assert placement.violations() == []
        if cap is not None:
            assert all(c <= max(cap, before[lp]) for lp, c in placement.counts().items())


def test_criterion_7_placement_and_migration():
    _placement_property()
    for mode, f in (("none", 0), ("crash", 1), ("byzantine", 1)):
        cfg = scenario(mode, f, num_entities=40, total_timesteps=200, trace_digests=True, exec_mode="serial",
                       migration_period=20, migration_threshold=0.3)
        off = run_simulation(cfg)
        on = run_simulation(with_(cfg, migration_enabled=True))
        assert on.migrations_applied > 0
        assert on.trace == off.trace
        assert on.entity_digests == off.entity_digests
        assert on.delivered_set() == off.delivered_set()


def test_criterion_8_filter_properties():
    violations = 0
    for m in range(1, 6):
        for seq in sequences(m):
            buf = QuorumBuffer()
            crash = [filter_crash(copy(r, p), buf) for r, p in seq]
            violations += crash.count(Verdict.DELIVER) != min(1, len(seq))
            violations += bool(seq) and crash[0] is not Verdict.DELIVER
            for f in range(0, (m - 1) // 2 + 1):
                buf = QuorumBuffer()
                got = [filter_byzantine(copy(r, p), buf, f) for r, p in seq]
                hits = [i for i, v in enumerate(got) if v is Verdict.DELIVER]
                expect = oracle_quorum_index(seq, f)
                violations += len(hits) > 1
                violations += hits != ([] if expect is None else [expect[0]])
                first: dict[int, bytes] = {}
                for i, ((r, p), v) in enumerate(zip(seq, got)):
                    if hits and i > hits[0]:
                        break
                    violations += r in first and first[r] != p and v is not Verdict.DROP_EQUIVOCAL
                    first.setdefault(r, p)
    # two copies from one replica never make a quorum
    buf = QuorumBuffer()
    violations += Verdict.DELIVER in [filter_byzantine(copy(0, b"x"), buf, 1) for _ in range(4)]
    assert violations == 0


def test_criterion_9_trend():
    totals = {}
    for n, (mode, f) in itertools.product((1000, 2000, 4000), (("none", 0), ("crash", 1), ("byzantine", 1))):
        cfg = scenario(mode, f, num_entities=n, total_timesteps=30, exec_mode="serial", record_deliveries=False)
        totals[n, mode] = run_simulation(cfg).totals().sent
    for n in (1000, 2000, 4000):
        assert totals[n, "byzantine"] > totals[n, "crash"] > totals[n, "none"]
    for mode in ("none", "crash", "byzantine"):
        assert totals[1000, mode] < totals[2000, mode] < totals[4000, mode]


def test_criterion_10_wire_format_and_process_mode():
    for env, hexstr in GOLDEN:
        assert encode(env).hex() == hexstr
        assert decode(bytes.fromhex(hexstr)) == env
    cfg = scenario("byzantine", 1, total_timesteps=300,
                   fault_plan=FaultPlan(byzantine=(ByzantineFault(3, 0, "flip-payload"),)))
    threads = run_simulation(cfg)
    procs = run_simulation(with_(cfg, exec_mode="processes"))
    assert procs.digest() == threads.digest()
