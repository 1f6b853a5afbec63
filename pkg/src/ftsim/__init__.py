"""Replicated, fault-tolerant time-stepped parallel simulation."""

from .faults import ByzantineFault, CorruptionMode, FaultPlan
from .kernel import SimConfig, run_simulation
from .p2p import P2PModelConfig
from .replication import FailureMode, ReplicationPolicy
from .report import SimReport

__all__ = [
    "ByzantineFault",
    "CorruptionMode",
    "FailureMode",
    "FaultPlan",
    "P2PModelConfig",
    "ReplicationPolicy",
    "SimConfig",
    "SimReport",
    "run_simulation",
]
