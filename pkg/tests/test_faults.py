import pytest

from conftest import make_config, with_
from ftsim import ByzantineFault, CorruptionMode, FaultPlan, run_simulation
from ftsim.errors import ConfigError
from ftsim.faults import apply_crash, corrupt
from ftsim.kernel import LpRuntime, build_model
from ftsim.replication import place_instances
from ftsim.transport import Envelope, InstanceId

E = Envelope(InstanceId(1, 0), InstanceId(2, 0), 3, 5, 7, b"\x00\xff\x10")


def test_plan_rejects_repeated_lp():
    with pytest.raises(ConfigError):
        FaultPlan(crashes=((1, 5),), byzantine=(ByzantineFault(1, 0, "drop-all"),))
    with pytest.raises(ConfigError):
        FaultPlan(crashes=((1, 5), (1, 9)))
    with pytest.raises(ConfigError):
        FaultPlan(crashes=((1, -1),))


def test_plan_queries():
    plan = FaultPlan(crashes=((2, 10),), byzantine=(ByzantineFault(0, 4, CorruptionMode.DUPLICATE),))
    assert plan.faulty_lps == {0, 2}
    assert plan.crashes_at(10) == [2] and plan.crashes_at(9) == []
    assert plan.crash_time(2) == 10 and plan.crash_time(0) is None
    assert plan.corruption_for(0, 3) is None
    assert plan.corruption_for(0, 4) is CorruptionMode.DUPLICATE
    with pytest.raises(ConfigError):
        plan.validate(2)


def test_corruptions():
    assert corrupt(E, CorruptionMode.FLIP_PAYLOAD)[0].payload == bytes([0xA5, 0x5A, 0xB5])
    assert corrupt(E, CorruptionMode.DROP_ALL) == []
    assert corrupt(E, CorruptionMode.DUPLICATE) == [E, E]
    assert corrupt(E, CorruptionMode.GARBLE_SEQ)[0].seq == 8


def test_apply_crash_only_at_scheduled_step():
    cfg = make_config("crash", 1)
    model = build_model(cfg)
    lp = LpRuntime(1, cfg, model)
    lp.seed_instances(place_instances(cfg.num_entities, cfg.policy, cfg.num_lps))
    plan = FaultPlan(crashes=((1, 5),))
    assert not apply_crash(plan, lp, 4)
    assert apply_crash(plan, lp, 5)
    assert lp.crashed and not lp.slots
    assert not apply_crash(plan, lp, 5)


def test_crash_run_matches_fault_free():
    base = make_config("crash", 1)
    ref = run_simulation(base)
    run = run_simulation(with_(base, fault_plan=FaultPlan(crashes=((2, 60),))))
    assert run.entity_digests == ref.entity_digests
    assert run.delivered_set() == ref.delivered_set()
    assert run.crashed_lps == [2]
    assert run.lp_counters[2].lost_to_crash > 0
    assert all(c.conserved() for c in run.lp_counters.values())


def test_crash_without_replication_loses_entities():
    base = make_config("crash", 0)
    run = run_simulation(with_(base, fault_plan=FaultPlan(crashes=((0, 50),))))
    assert "lost" in run.entity_digests.values()


@pytest.mark.parametrize("mode", list(CorruptionMode))
def test_single_byzantine_lp_is_masked(mode):
    base = make_config("byzantine", 1)
    ref = run_simulation(base)
    run = run_simulation(with_(base, fault_plan=FaultPlan(byzantine=(ByzantineFault(1, 0, mode),))))
    assert run.entity_digests == ref.entity_digests
    assert run.delivered_set() == ref.delivered_set()
    assert all(c.conserved() for c in run.lp_counters.values())
    if mode is CorruptionMode.GARBLE_SEQ:
        # shifted ids never gather a quorum and age out
        assert run.totals().expired_entries > 0
    else:
        assert run.totals().quorum_expired == 0


def test_two_byzantine_lps_break_safety():
    base = make_config("byzantine", 1)
    ref = run_simulation(base)
    plan = FaultPlan(byzantine=(ByzantineFault(0, 0, "flip-payload"), ByzantineFault(1, 0, "flip-payload")))
    run = run_simulation(with_(base, fault_plan=plan))
    assert run.delivered_set() - ref.delivered_set()
