import itertools

import pytest
from hypothesis import given, strategies as st

from ftsim.errors import ConfigError, PlacementInfeasible
from ftsim.replication import (
    FailureMode, LogicalMessage, PlacementMap, ReplicationPolicy, derived_seed, fan_out,
    place_instances, required_instances, seed_for,
)
from ftsim.transport import InstanceId


@pytest.mark.parametrize("mode,f,m", [
    ("none", 0, 1), ("crash", 0, 1), ("crash", 1, 2), ("crash", 3, 4),
    ("byzantine", 0, 1), ("byzantine", 1, 3), ("byzantine", 2, 5),
])
def test_required_instances(mode, f, m):
    assert required_instances(ReplicationPolicy(FailureMode(mode), f)) == m


def test_policy_validation():
    with pytest.raises(ConfigError):
        ReplicationPolicy(FailureMode.CRASH, -1)
    with pytest.raises(ConfigError):
        ReplicationPolicy(FailureMode.NONE, 1)


@given(st.integers(0, 60), st.sampled_from([("none", 0), ("crash", 1), ("crash", 2), ("byzantine", 1), ("byzantine", 2)]), st.integers(1, 9))
def test_placement_distinct_and_balanced(n, pol, lps):
    policy = ReplicationPolicy(FailureMode(pol[0]), pol[1])
    if lps < policy.replicas:
        with pytest.raises(PlacementInfeasible):
            place_instances(n, policy, lps)
        return
    p = place_instances(n, policy, lps)
    assert p.violations() == []
    assert len(p.assignment) == n * policy.replicas
    counts = p.counts().values()
    assert max(counts) - min(counts) <= 1
    for e in range(n):
        assert len(set(p.lps_of_entity(e))) == policy.replicas


def test_placement_infeasible_example():
    with pytest.raises(PlacementInfeasible):
        place_instances(10, ReplicationPolicy(FailureMode.BYZANTINE, 1), 2)


def test_violations_detect_siblings():
    p = PlacementMap(3, 2, {InstanceId(0, 0): 1, InstanceId(0, 1): 1})
    assert any("sharing" in v for v in p.violations())
    p = PlacementMap(3, 2, {InstanceId(0, 0): 1})
    assert p.violations()


def test_rows_round_trip():
    p = place_instances(7, ReplicationPolicy(FailureMode.CRASH, 1), 3)
    assert PlacementMap.from_rows(3, 2, p.as_rows()).assignment == p.assignment


def test_seed_shared_by_replicas_and_injective():
    seeds = [seed_for(42, e) for e in range(20000)]
    assert len(set(seeds)) == len(seeds)
    assert seed_for(42, 5) != seed_for(43, 5)
    assert derived_seed(42, 1) != derived_seed(42, 2)
    assert all(0 <= s < 2**64 for s in seeds[:100])


def test_fan_out_m_copies():
    src = InstanceId(3, 1)
    msg = LogicalMessage(8, 17, b"x")
    copies = fan_out(src, msg, 12, 2, 3)
    assert [c.dst for c in copies] == [InstanceId(8, j) for j in range(3)]
    assert {c.logical_id for c in copies} == {(3, 8, 12, 2)}


@pytest.mark.parametrize("m", [1, 2, 3, 4, 5])
def test_logical_message_costs_m_squared(m):
    envs = list(itertools.chain.from_iterable(
        fan_out(InstanceId(0, j), LogicalMessage(1, 5, b""), 0, 0, m) for j in range(m)
    ))
    assert len(envs) == m * m
